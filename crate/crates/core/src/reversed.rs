//! The reversed-MDP view: candidate kernels evaluated as policies.
//!
//! Swapping the roles of the policy and the transition kernel produces an
//! MDP on the pair space `S̄ = S×A` with action set `Ā = S`: in state
//! `(s,a)` the "policy" picks a next original-state `s'` with probability
//! `q(s'|s,a)`, and the fixed dynamics then land in `(s', a')` with
//! probability `π(a'|s')`. Its initial distribution is
//! `ρ̄(s,a) = ρ_s·π(a|s)` and its reward depends only on the state,
//! `r̄((s,a),·) = r(s,a)`. The scalar value satisfies
//! `V̄^q(ρ̄) = V^π_q(ρ)`, which turns the kernel optimization of the testing
//! problem into policy optimization with an exact gradient:
//!
//! `∂V^π_q(ρ)/∂q(s'|s,a) = d_ρ(s,a)/(1−γ) · (r(s,a) + γ V^π_q(s'))`.

use crate::linalg::solve_dense;
use crate::mdp::{value_bundle, visitation, MdpError, MdpInstance, Start, TransitionKernel};

/// Precomputed reversed-MDP data for one instance.
#[derive(Debug, Clone)]
pub struct ReversedView<'a> {
    base: &'a MdpInstance,
    rho_bar: Vec<f64>,
    inv_rho_bar_inf: f64,
}

impl<'a> ReversedView<'a> {
    pub fn new(base: &'a MdpInstance) -> Self {
        let n_actions = base.n_actions();
        let mut rho_bar = vec![0.0; base.n_pairs()];
        for s in 0..base.n_states() {
            for a in 0..n_actions {
                rho_bar[s * n_actions + a] = base.rho()[s] * base.policy_prob(s, a);
            }
        }
        let inv_rho_bar_inf = rho_bar
            .iter()
            .map(|&r| if r > 0.0 { 1.0 / r } else { f64::INFINITY })
            .fold(0.0, f64::max);
        Self {
            base,
            rho_bar,
            inv_rho_bar_inf,
        }
    }

    pub fn base(&self) -> &MdpInstance {
        self.base
    }

    /// `ρ̄(s,a) = ρ_s π(a|s)`, flat row-major.
    pub fn rho_bar(&self) -> &[f64] {
        &self.rho_bar
    }

    /// `‖1/ρ̄‖_∞`; infinite when some pair has zero initial mass.
    pub fn inv_rho_bar_inf(&self) -> f64 {
        self.inv_rho_bar_inf
    }

    /// Number of reversed states `|S̄| = |S||A|`.
    pub fn n_pair_states(&self) -> usize {
        self.base.n_pairs()
    }

    /// Number of reversed actions `|Ā| = |S|`.
    pub fn n_reversed_actions(&self) -> usize {
        self.base.n_states()
    }
}

/// Per-pair-state values `V̄(s,a)` of a candidate kernel, computed natively
/// on the pair space by solving the reversed Bellman system. This is an
/// independent route to the same quantities as `Q^π_q(s,a)`.
pub fn reversed_state_values(
    candidate: &TransitionKernel,
    view: &ReversedView<'_>,
) -> Result<Vec<f64>, MdpError> {
    let base = view.base();
    if candidate.n_states() != base.n_states() || candidate.n_actions() != base.n_actions() {
        return Err(MdpError::DimensionMismatch {
            what: "candidate kernel shape",
            expected: base.n_pairs(),
            got: candidate.n_states() * candidate.n_actions(),
        });
    }
    let n = base.n_states();
    let n_actions = base.n_actions();
    let pairs = n * n_actions;
    let gamma = base.gamma();

    // (I − γ P̄) V̄ = r̄ with P̄[(s,a),(s',a')] = q(s'|s,a)·π(a'|s').
    let mut a_mat = vec![0.0; pairs * pairs];
    let mut rhs = vec![0.0; pairs];
    for s in 0..n {
        for a in 0..n_actions {
            let i = s * n_actions + a;
            rhs[i] = base.reward(s, a);
            a_mat[i * pairs + i] += 1.0;
            let row = candidate.row(s, a);
            for (s_next, q) in row.iter().enumerate() {
                if *q == 0.0 {
                    continue;
                }
                for a_next in 0..n_actions {
                    let pi = base.policy_prob(s_next, a_next);
                    if pi == 0.0 {
                        continue;
                    }
                    a_mat[i * pairs + s_next * n_actions + a_next] -= gamma * q * pi;
                }
            }
        }
    }
    solve_dense(&mut a_mat, &mut rhs, pairs).ok_or(MdpError::SingularSystem)
}

/// `V̄^{candidate}(ρ̄)`, equal to `V^π_candidate(ρ)` of the forward view.
pub fn reversed_value(
    candidate: &TransitionKernel,
    view: &ReversedView<'_>,
) -> Result<f64, MdpError> {
    let values = reversed_state_values(candidate, view)?;
    Ok(values.iter().zip(view.rho_bar()).map(|(v, r)| v * r).sum())
}

/// Exact gradient of `V^π_q(ρ)` with respect to the kernel entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    n_states: usize,
    n_actions: usize,
    g: Vec<f64>,
}

impl GradientTensor {
    pub fn get(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.g[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Computes the gradient tensor
/// `g[s][a][s'] = d_ρ(s,a)/(1−γ)·(r(s,a) + γ V^π_q(s'))`
/// from the candidate's visitation distribution and value function.
pub fn reversed_gradient(
    candidate: &TransitionKernel,
    view: &ReversedView<'_>,
) -> Result<GradientTensor, MdpError> {
    let base = view.base();
    let vb = value_bundle(candidate, base)?;
    let vis = visitation(candidate, base, Start::InitialDistribution)?;
    let n = base.n_states();
    let n_actions = base.n_actions();
    let scale = 1.0 / (1.0 - base.gamma());
    let gamma = base.gamma();

    let mut g = vec![0.0; n * n_actions * n];
    for s in 0..n {
        for a in 0..n_actions {
            let d = vis.pair(s, a, n_actions) * scale;
            let r = base.reward(s, a);
            let base_idx = (s * n_actions + a) * n;
            for s_next in 0..n {
                g[base_idx + s_next] = d * (r + gamma * vb.v[s_next]);
            }
        }
    }
    Ok(GradientTensor {
        n_states: n,
        n_actions,
        g,
    })
}

/// Smoothness constants of the reversed value as a function of the policy:
/// returns `(L0, L)` with `L0 = 2γ|Ā| r_max/(1−γ)³` (the tight constant)
/// and `L = 2(γ|Ā|+1) r_max/(1−γ)³` (the padded constant used by the
/// fixed-step inner solver), where `|Ā| = |S|`.
pub fn smoothness_constants(view: &ReversedView<'_>) -> (f64, f64) {
    let base = view.base();
    let gamma = base.gamma();
    let r_max = base.r_max();
    let n_rev_actions = view.n_reversed_actions() as f64;
    let denom = (1.0 - gamma).powi(3);
    let l0 = 2.0 * gamma * n_rev_actions * r_max / denom;
    let l = 2.0 * (gamma * n_rev_actions + 1.0) * r_max / denom;
    (l0, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::mdp::{value_bundle, visitation, MdpInstance, Start};
    use crate::testing::{random_instance, random_instance_exact, random_kernel};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reversed_value_matches_forward_value_on_reference() {
        let (instance, _) = instances::nonconvex_example();
        let view = ReversedView::new(&instance);
        let v = reversed_value(instance.kernel(), &view).unwrap();
        assert!((v + 0.15).abs() < 0.01, "v = {v}");
        let q1 = instances::nonconvex_alternative(1);
        let v1 = reversed_value(&q1, &view).unwrap();
        assert!((v1 - 0.87).abs() < 0.01, "v1 = {v1}");
    }

    #[test]
    fn reversed_states_equal_forward_q_values() {
        let (instance, _) = instances::three_state();
        let view = ReversedView::new(&instance);
        let candidate = instance.kernel();
        let bar_v = reversed_state_values(candidate, &view).unwrap();
        let vb = value_bundle(candidate, &instance).unwrap();
        for i in 0..instance.n_pairs() {
            assert_abs_diff_eq!(bar_v[i], vb.q_values[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn reversed_identity_on_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let instance = random_instance(&mut rng, 4, 3);
            let view = ReversedView::new(&instance);
            for _ in 0..10 {
                let q = random_kernel(&mut rng, instance.n_states(), instance.n_actions());
                let rev = reversed_value(&q, &view).unwrap();
                let fwd = value_bundle(&q, &instance).unwrap().v_rho;
                assert_abs_diff_eq!(rev, fwd, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (instance, _) = instances::two_state();
        let view = ReversedView::new(&instance);
        let q = instance.kernel().clone();
        let grad = reversed_gradient(&q, &view).unwrap();
        let h = 1e-6;
        let n = instance.n_states();
        for s in 0..n {
            for a in 0..instance.n_actions() {
                // central differences along simplex-tangent directions
                // (+h, −h) between coordinate pairs, so iterates stay on the
                // probability manifold
                for i in 0..n {
                    for j in (i + 1)..n {
                        let mut up = q.as_slice().to_vec();
                        let mut dn = q.as_slice().to_vec();
                        let base = (s * instance.n_actions() + a) * n;
                        up[base + i] += h;
                        up[base + j] -= h;
                        dn[base + i] -= h;
                        dn[base + j] += h;
                        let ku = TransitionKernel::new(n, instance.n_actions(), up).unwrap();
                        let kd = TransitionKernel::new(n, instance.n_actions(), dn).unwrap();
                        let vu = value_bundle(&ku, &instance).unwrap().v_rho;
                        let vd = value_bundle(&kd, &instance).unwrap().v_rho;
                        let fd = (vu - vd) / (2.0 * h);
                        let analytic = grad.get(s, a, i) - grad.get(s, a, j);
                        let denom = analytic.abs().max(1e-6);
                        assert!(
                            ((fd - analytic) / denom).abs() < 1e-4,
                            "fd {fd} vs analytic {analytic} at ({s},{a},{i},{j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn constant_reward_gradient_is_constant_within_blocks() {
        let kernel = TransitionKernel::uniform(3, 2);
        let c = 0.2;
        let instance = MdpInstance::new(
            3,
            2,
            kernel.clone(),
            vec![c; 6],
            vec![1.0 / 3.0; 3],
            0.9,
            vec![0.5; 6],
        )
        .unwrap();
        let view = ReversedView::new(&instance);
        let grad = reversed_gradient(&kernel, &view).unwrap();
        let vis = visitation(&kernel, &instance, Start::InitialDistribution).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let expected = vis.pair(s, a, 2) * (c + 0.9 * c / 0.1) / 0.1;
                for s_next in 0..3 {
                    assert_abs_diff_eq!(grad.get(s, a, s_next), expected, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn gradient_blocks_have_positive_visitation_scale() {
        // under positive rho and full-support pi, every pair has
        // d(s,a) >= (1-gamma)·rho_bar(s,a) > 0
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let instance = random_instance_exact(&mut rng, 3, 2);
        let vis = visitation(instance.kernel(), &instance, Start::InitialDistribution).unwrap();
        let view = ReversedView::new(&instance);
        for s in 0..3 {
            for a in 0..2 {
                let floor = (1.0 - instance.gamma()) * view.rho_bar()[s * 2 + a];
                assert!(vis.pair(s, a, 2) >= floor - 1e-12);
                assert!(floor > 0.0);
            }
        }
    }

    #[test]
    fn smoothness_constant_closed_forms() {
        // |S| = 3, gamma = 0.9, r_max = 0.5 -> L = 2(0.9·3+1)·0.5/0.001 = 3700
        let kernel = TransitionKernel::uniform(3, 2);
        let mut reward = vec![0.1; 6];
        reward[4] = -0.5;
        let instance =
            MdpInstance::new(3, 2, kernel, reward, vec![1.0 / 3.0; 3], 0.9, vec![0.5; 6]).unwrap();
        let view = ReversedView::new(&instance);
        let (l0, l) = smoothness_constants(&view);
        assert_abs_diff_eq!(l, 3700.0, epsilon = 1e-9);
        assert_abs_diff_eq!(l0, 2.0 * 0.9 * 3.0 * 0.5 / 0.001, epsilon = 1e-9);

        // benchmark-sized check: r_max = 1.0, gamma = 0.9, |S| = 2 -> L = 5600
        let (instance, _) = instances::two_state();
        let view = ReversedView::new(&instance);
        let (_, l) = smoothness_constants(&view);
        assert_abs_diff_eq!(l, 5600.0, epsilon = 1e-9);
    }

    #[test]
    fn empirical_lipschitz_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let instance = random_instance_exact(&mut rng, 3, 2);
        let view = ReversedView::new(&instance);
        let (l0, _) = smoothness_constants(&view);
        for _ in 0..100 {
            let q1 = random_kernel(&mut rng, 3, 2);
            let q2 = random_kernel(&mut rng, 3, 2);
            let g1 = reversed_gradient(&q1, &view).unwrap();
            let g2 = reversed_gradient(&q2, &view).unwrap();
            let grad_dist: f64 = g1
                .as_slice()
                .iter()
                .zip(g2.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let q_dist: f64 = q1
                .as_slice()
                .iter()
                .zip(q2.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                grad_dist <= l0 * q_dist + 1e-9,
                "gradient jump {grad_dist} exceeds L0·dist = {}",
                l0 * q_dist
            );
        }
    }

    #[test]
    fn performance_difference_identity_on_random_pairs() {
        // Q_p(s,a) − Q_p̃(s,a) = γ/(1−γ)·Σ_{s',a'} d_{p,s,a}(s',a')·
        //   Σ_{s''} V_p̃(s'')·(p(s''|s',a') − p̃(s''|s',a'))
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let instance = random_instance_exact(&mut rng, 3, 2);
            let p = random_kernel(&mut rng, 3, 2);
            let p_tilde = random_kernel(&mut rng, 3, 2);
            let vb_p = value_bundle(&p, &instance).unwrap();
            let vb_t = value_bundle(&p_tilde, &instance).unwrap();
            let gamma = instance.gamma();
            for s in 0..3 {
                for a in 0..2 {
                    let vis = visitation(&p, &instance, Start::Pair(s, a)).unwrap();
                    let mut total = 0.0;
                    for s_p in 0..3 {
                        for a_p in 0..2 {
                            let d = vis.pair(s_p, a_p, 2);
                            let diff: f64 = (0..3)
                                .map(|s2| {
                                    vb_t.v[s2] * (p.prob(s_p, a_p, s2) - p_tilde.prob(s_p, a_p, s2))
                                })
                                .sum();
                            total += d * diff;
                        }
                    }
                    let lhs = vb_p.q_values[s * 2 + a] - vb_t.q_values[s * 2 + a];
                    let rhs = gamma / (1.0 - gamma) * total;
                    assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
                }
            }
        }
    }
}
