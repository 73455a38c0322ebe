//! Test support: random instance generators and slow reference oracles.
//!
//! The oracles here deliberately avoid the solution paths used by the
//! library (direct linear solves, KKT projections) so tests can compare two
//! independent routes to the same quantity.

use rand::Rng;

use crate::kl::Allocation;
use crate::mdp::{validate_instance, MdpInstance, TransitionKernel};

/// Random full-support row-stochastic kernel (rows drawn from normalized
/// exponentials).
pub fn random_kernel<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> TransitionKernel {
    let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        probs.extend(random_simplex_point(rng, n_states));
    }
    TransitionKernel::new(n_states, n_actions, probs).expect("generated rows are stochastic")
}

/// A point of the interior of the simplex (normalized exponentials with a
/// small floor to avoid degenerate rows).
pub fn random_simplex_point<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len)
        .map(|_| -(rng.random::<f64>().max(1e-12)).ln() + 1e-3)
        .collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    v
}

/// Random valid instance with full-support policy and positive `ρ`.
/// Sizes are drawn up to the given bounds (at least 2 states).
pub fn random_instance<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> MdpInstance {
    let n_states = rng.random_range(2..=max_states.max(2));
    let n_actions = rng.random_range(1..=max_actions.max(1));
    random_instance_exact(rng, n_states, n_actions)
}

/// Random valid instance of exactly the given size.
pub fn random_instance_exact<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> MdpInstance {
    let kernel = random_kernel(rng, n_states, n_actions);
    let reward: Vec<f64> = (0..n_states * n_actions)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let rho = random_simplex_point(rng, n_states);
    let mut policy = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        policy.extend(random_simplex_point(rng, n_actions));
    }
    let gamma = rng.random_range(0.5..0.95);
    MdpInstance::new(n_states, n_actions, kernel, reward, rho, gamma, policy)
        .expect("generated instance is valid")
}

/// Random instance that also satisfies the standing assumptions (positive
/// `ρ`, strict reward inequality, value away from the boundary), found by
/// rejection sampling.
pub fn random_test_valid_instance<R: Rng>(
    rng: &mut R,
    max_states: usize,
    max_actions: usize,
) -> MdpInstance {
    loop {
        let instance = random_instance(rng, max_states, max_actions);
        let w = Allocation::uniform(instance.n_states(), instance.n_actions());
        let report = validate_instance(&instance, &w);
        if report.assumptions_hold() && report.v_rho.abs() > 1e-3 {
            return instance;
        }
    }
}

/// Value-iteration oracle: `iters` synchronous Bellman sweeps from zero.
pub fn value_iteration(
    kernel: &TransitionKernel,
    instance: &MdpInstance,
    iters: usize,
) -> Vec<f64> {
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    let gamma = instance.gamma();
    let mut v = vec![0.0; n];
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mut acc = 0.0;
            for a in 0..n_actions {
                let pi = instance.policy_prob(s, a);
                if pi == 0.0 {
                    continue;
                }
                let row = kernel.row(s, a);
                let cont: f64 = row.iter().zip(&v).map(|(p, vs)| p * vs).sum();
                acc += pi * (instance.reward(s, a) + gamma * cont);
            }
            next[s] = acc;
        }
        v = next;
    }
    v
}

/// Truncated geometric-sum oracle for the discounted pair visitation from
/// the initial distribution: `(1−γ) Σ_{t≤horizon} γ^t μ_t`.
pub fn visitation_truncated_sum(
    kernel: &TransitionKernel,
    instance: &MdpInstance,
    horizon: usize,
) -> Vec<f64> {
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    let pairs = n * n_actions;
    let gamma = instance.gamma();

    let mut mu = vec![0.0; pairs];
    for s in 0..n {
        for a in 0..n_actions {
            mu[s * n_actions + a] = instance.rho()[s] * instance.policy_prob(s, a);
        }
    }
    let mut total = vec![0.0; pairs];
    let mut discount = 1.0;
    for _ in 0..=horizon {
        for i in 0..pairs {
            total[i] += discount * mu[i];
        }
        discount *= gamma;
        let mut next = vec![0.0; pairs];
        for s in 0..n {
            for a in 0..n_actions {
                let mass = mu[s * n_actions + a];
                if mass == 0.0 {
                    continue;
                }
                let row = kernel.row(s, a);
                for (s_next, p) in row.iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    for a_next in 0..n_actions {
                        next[s_next * n_actions + a_next] +=
                            mass * p * instance.policy_prob(s_next, a_next);
                    }
                }
            }
        }
        mu = next;
    }
    for v in total.iter_mut() {
        *v *= 1.0 - gamma;
    }
    total
}

/// Golden-section minimization of a unimodal scalar function on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// All lattice rows of the simplex with denominator `d`: every vector
/// `k/d` with `k ∈ Z₊^len`, `Σk = d`. Lexicographic order.
pub fn row_lattice(d: usize, len: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; len];
    fn rec(idx: usize, remaining: usize, d: usize, current: &mut [usize], out: &mut Vec<Vec<f64>>) {
        if idx == current.len() - 1 {
            current[idx] = remaining;
            out.push(current.iter().map(|&k| k as f64 / d as f64).collect());
            return;
        }
        for k in 0..=remaining {
            current[idx] = k;
            rec(idx + 1, remaining - k, d, current, out);
        }
    }
    rec(0, d, d, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_counts_match_binomials() {
        assert_eq!(row_lattice(50, 2).len(), 51);
        assert_eq!(row_lattice(10, 3).len(), 66); // C(12, 2)
        for row in row_lattice(10, 3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        // location precision is limited by the float plateau of f near the
        // minimum: sqrt(ulp(1.0)) ~ 1e-8
        let (x, v) = golden_section(|x| (x - 0.3) * (x - 0.3) + 1.0, -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        let ka = random_kernel(&mut a, 3, 2);
        let kb = random_kernel(&mut b, 3, 2);
        assert_eq!(ka.as_slice(), kb.as_slice());
    }
}
