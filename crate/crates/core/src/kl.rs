//! KL geometry: divergences between kernel rows, Euclidean projections onto
//! KL-constrained sets, and the budget grid for the outer search.
//!
//! Three feasible sets appear:
//!
//! * a single row ball `{q ∈ Δ(S) : KL(p_row, q) ≤ b}`,
//! * the product box `Q(b)` constraining every `(s,a)` row independently,
//! * the global ball `{q : Σ_sa ω_sa KL_sa(p,q) ≤ σ}` coupling all rows.
//!
//! All projections are Euclidean. The row projection solves the KKT system
//! with two nested scalar bisections: an outer one on the multiplier of the
//! KL constraint and an inner one on the multiplier of the sum-to-one
//! constraint. The global projection reuses the same penalized row solve
//! with an outer bisection on the single coupling multiplier.
//!
//! KL may be `+∞` (support mismatch); it is stored as IEEE infinity and a
//! weight of zero silences it (`0·∞ = 0` by convention).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpError, TransitionKernel};

const SUM_ONE_TOL: f64 = 1e-13;
const MAX_BISECT: usize = 200;

/// Errors from projections and grid enumeration.
#[derive(Debug, Clone, Error)]
pub enum KlError {
    #[error("shape mismatch between operands ({what})")]
    ShapeMismatch { what: &'static str },
    #[error("projection did not converge after {iterations} iterations (residual {residual})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Best iterate found, flat row-major.
        best: Vec<f64>,
    },
    #[error("projection failed on row (s={s}, a={a}): {source}")]
    RowFailure {
        s: usize,
        a: usize,
        #[source]
        source: Box<KlError>,
    },
    #[error("budget grid would hold about {estimate} points, above the cap {cap}")]
    GridExplosion { estimate: u128, cap: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Sampling proportions `ω` over state–action pairs, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    n_states: usize,
    n_actions: usize,
    w: Vec<f64>,
}

impl Allocation {
    pub fn new(n_states: usize, n_actions: usize, w: Vec<f64>) -> Result<Self, MdpError> {
        if w.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "allocation",
                expected: n_states * n_actions,
                got: w.len(),
            });
        }
        let mut sum = 0.0;
        for (i, v) in w.iter().enumerate() {
            if *v < 0.0 {
                return Err(MdpError::NegativeEntry {
                    what: "allocation",
                    index: i,
                    value: *v,
                });
            }
            sum += *v;
        }
        if (sum - 1.0).abs() >= 1e-12 {
            return Err(MdpError::RowNotStochastic {
                what: "allocation",
                row: 0,
                sum,
            });
        }
        let mut w = w;
        if sum != 1.0 {
            for v in w.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            w,
        })
    }

    /// The uniform allocation `ω_sa = 1/(|S||A|)`.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let v = 1.0 / (n_states * n_actions) as f64;
        Self {
            n_states,
            n_actions,
            w: vec![v; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.w[s * self.n_actions + a]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn min_positive(&self) -> f64 {
        self.w
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-pair KL budgets `b ≥ 0` (nats), defining the product box `Q(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVector {
    n_states: usize,
    n_actions: usize,
    b: Vec<f64>,
}

impl BudgetVector {
    pub fn new(n_states: usize, n_actions: usize, b: Vec<f64>) -> Result<Self, MdpError> {
        if b.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "budget vector",
                expected: n_states * n_actions,
                got: b.len(),
            });
        }
        for (i, v) in b.iter().enumerate() {
            if *v < 0.0 {
                return Err(MdpError::NegativeEntry {
                    what: "budget vector",
                    index: i,
                    value: *v,
                });
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            b,
        })
    }

    pub fn zero(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            b: vec![0.0; n_states * n_actions],
        }
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            b: vec![value.max(0.0); n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.b[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    /// Membership in the weighted budget simplex `B_σ(ω)`, i.e.
    /// `Σ ω_sa b_sa ≤ σ`, with a relative slack of `1e-12` absorbing
    /// floating-point accumulation.
    pub fn in_budget_simplex(&self, w: &Allocation, sigma: f64) -> bool {
        let dot: f64 = self.b.iter().zip(w.weights()).map(|(b, w)| b * w).sum();
        dot <= sigma * (1.0 + 1e-12) + 1e-15
    }
}

/// `KL(p_row, q_row) = Σ p_i ln(p_i/q_i)` in nats, with `0·ln 0 = 0` and
/// `+∞` when `q_i = 0 < p_i`.
pub fn kl_row(p_row: &[f64], q_row: &[f64]) -> f64 {
    debug_assert_eq!(p_row.len(), q_row.len());
    let mut total = 0.0;
    for (p, q) in p_row.iter().zip(q_row) {
        if *p == 0.0 {
            continue;
        }
        if *q <= 0.0 {
            return f64::INFINITY;
        }
        total += p * (p / q).ln();
    }
    total
}

/// `Σ_sa ω_sa KL_sa(p, q)`; a pair with `ω_sa = 0` contributes zero even
/// when its row divergence is infinite.
pub fn weighted_kl(w: &Allocation, p: &TransitionKernel, q: &TransitionKernel) -> f64 {
    debug_assert_eq!(p.n_states(), q.n_states());
    debug_assert_eq!(p.n_actions(), q.n_actions());
    let mut total = 0.0;
    for s in 0..p.n_states() {
        for a in 0..p.n_actions() {
            let weight = w.get(s, a);
            if weight == 0.0 {
                continue;
            }
            total += weight * kl_row(p.row(s, a), q.row(s, a));
        }
    }
    total
}

/// Euclidean projection of `x` onto the probability simplex, by the usual
/// sort-and-threshold rule.
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if i + 1 == n || sorted[i + 1] <= candidate {
            theta = candidate;
            break;
        }
    }
    x.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Solves `min ½‖q − x‖² + λ·KL(p, q)` over the simplex for a fixed
/// multiplier `λ ≥ 0`. Stationarity gives the closed form
/// `q_i = ((x_i − ν) + sqrt((x_i − ν)² + 4λ p_i))/2` for `p_i > 0` and the
/// plain simplex clip for `p_i = 0`; the sum-to-one multiplier `ν` is found
/// by bisection.
fn penalized_row_solve(x: &[f64], p: &[f64], lambda: f64) -> Vec<f64> {
    if lambda <= 0.0 {
        return project_simplex(x);
    }
    let eval = |nu: f64, out: &mut Vec<f64>| -> f64 {
        out.clear();
        let mut sum = 0.0;
        for (xi, pi) in x.iter().zip(p) {
            let t = xi - nu;
            let qi = if *pi > 0.0 {
                0.5 * (t + (t * t + 4.0 * lambda * pi).sqrt())
            } else {
                t.max(0.0)
            };
            out.push(qi);
            sum += qi;
        }
        sum
    };

    let mut buf = Vec::with_capacity(x.len());
    let x_min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Bracket nu: the row sum is strictly decreasing in nu.
    let mut lo = x_min - 1.0;
    let mut step = 1.0;
    while eval(lo, &mut buf) < 1.0 {
        lo -= step;
        step *= 2.0;
    }
    let mut hi = x_max + lambda.sqrt() + 1.0;
    step = 1.0;
    while eval(hi, &mut buf) > 1.0 {
        hi += step;
        step *= 2.0;
    }

    let mut q = vec![0.0; x.len()];
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let sum = eval(mid, &mut buf);
        if (sum - 1.0).abs() <= SUM_ONE_TOL {
            q.clone_from(&buf);
            break;
        }
        if sum > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        q.clone_from(&buf);
    }
    // Force the simplex constraint exactly; the drift here is at the
    // bisection tolerance and far below the projection tolerance.
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        for v in q.iter_mut() {
            *v /= total;
        }
    }
    q
}

/// Euclidean projection of `x_row` onto `{q ∈ Δ(S) : KL(p_row, q) ≤ budget}`.
///
/// A budget of zero pins the result to `p_row`. Otherwise the simplex
/// projection is tried first; only when it violates the ball does the KL
/// multiplier activate, found by bisection so that the returned point is
/// feasible with the constraint tight to within `tol`.
pub fn project_kl_ball(
    x_row: &[f64],
    p_row: &[f64],
    budget: f64,
    tol: f64,
) -> Result<Vec<f64>, KlError> {
    if x_row.len() != p_row.len() {
        return Err(KlError::ShapeMismatch { what: "row length" });
    }
    if budget <= 0.0 {
        return Ok(p_row.to_vec());
    }
    let q0 = project_simplex(x_row);
    if kl_row(p_row, &q0) <= budget {
        return Ok(q0);
    }

    // Outer bisection on the KL multiplier. KL(p, q(λ)) decreases to zero as
    // λ grows, so a feasible upper bracket always exists.
    let mut lambda_lo = 0.0;
    let mut lambda_hi = 1.0;
    let mut q_hi = penalized_row_solve(x_row, p_row, lambda_hi);
    let mut doublings = 0;
    while kl_row(p_row, &q_hi) > budget {
        lambda_lo = lambda_hi;
        lambda_hi *= 2.0;
        q_hi = penalized_row_solve(x_row, p_row, lambda_hi);
        doublings += 1;
        if doublings > 200 {
            let residual = kl_row(p_row, &q_hi) - budget;
            return Err(KlError::NonConvergence {
                iterations: doublings,
                residual,
                best: q_hi,
            });
        }
    }

    let mut best = q_hi;
    for iter in 0..MAX_BISECT {
        let kl_best = kl_row(p_row, &best);
        if kl_best >= budget - tol && kl_best <= budget {
            return Ok(best);
        }
        let mid = 0.5 * (lambda_lo + lambda_hi);
        let q_mid = penalized_row_solve(x_row, p_row, mid);
        if kl_row(p_row, &q_mid) > budget {
            lambda_lo = mid;
        } else {
            lambda_hi = mid;
            best = q_mid;
        }
        if lambda_hi - lambda_lo <= f64::EPSILON * lambda_hi {
            let kl_best = kl_row(p_row, &best);
            if kl_best <= budget {
                return Ok(best);
            }
            return Err(KlError::NonConvergence {
                iterations: iter,
                residual: kl_best - budget,
                best,
            });
        }
    }
    let kl_best = kl_row(p_row, &best);
    if kl_best <= budget {
        Ok(best)
    } else {
        Err(KlError::NonConvergence {
            iterations: MAX_BISECT,
            residual: kl_best - budget,
            best,
        })
    }
}

/// Euclidean projection onto the product box `Q(b)`: each `(s,a)` row is
/// projected independently onto its own KL ball. Row results do not depend
/// on each other, so the outcome is order-independent.
pub fn project_product_box(
    x: &[f64],
    p: &TransitionKernel,
    b: &BudgetVector,
    tol: f64,
) -> Result<TransitionKernel, KlError> {
    let n = p.n_states();
    let n_actions = p.n_actions();
    if x.len() != n * n_actions * n {
        return Err(KlError::ShapeMismatch {
            what: "kernel-shaped input",
        });
    }
    let mut out = Vec::with_capacity(x.len());
    for s in 0..n {
        for a in 0..n_actions {
            let base = (s * n_actions + a) * n;
            let row = project_kl_ball(&x[base..base + n], p.row(s, a), b.get(s, a), tol).map_err(
                |e| KlError::RowFailure {
                    s,
                    a,
                    source: Box::new(e),
                },
            )?;
            out.extend_from_slice(&row);
        }
    }
    Ok(TransitionKernel::new(n, n_actions, out)?)
}

/// Euclidean projection onto the global set
/// `{q : Σ_sa ω_sa KL_sa(p, q) ≤ σ}`.
///
/// The single coupling multiplier `η` is found by outer bisection; for fixed
/// `η` the problem separates into per-row penalized solves with multiplier
/// `η·ω_sa` (rows with `ω_sa = 0` reduce to plain simplex projections).
pub fn project_global_kl(
    x: &[f64],
    p: &TransitionKernel,
    w: &Allocation,
    sigma: f64,
    tol: f64,
) -> Result<TransitionKernel, KlError> {
    let n = p.n_states();
    let n_actions = p.n_actions();
    if x.len() != n * n_actions * n {
        return Err(KlError::ShapeMismatch {
            what: "kernel-shaped input",
        });
    }
    if sigma <= 0.0 {
        // The feasible set collapses to {p} on every row with positive
        // weight; unweighted rows are free.
        let mut out = Vec::with_capacity(x.len());
        for s in 0..n {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n;
                if w.get(s, a) > 0.0 {
                    out.extend_from_slice(p.row(s, a));
                } else {
                    out.extend_from_slice(&project_simplex(&x[base..base + n]));
                }
            }
        }
        return Ok(TransitionKernel::new(n, n_actions, out)?);
    }

    let solve_rows = |eta: f64| -> (Vec<f64>, f64) {
        let mut out = Vec::with_capacity(x.len());
        let mut coupled = 0.0;
        for s in 0..n {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n;
                let weight = w.get(s, a);
                let row = penalized_row_solve(&x[base..base + n], p.row(s, a), eta * weight);
                if weight > 0.0 {
                    coupled += weight * kl_row(p.row(s, a), &row);
                }
                out.extend_from_slice(&row);
            }
        }
        (out, coupled)
    };

    let (q0, kl0) = solve_rows(0.0);
    if kl0 <= sigma {
        return Ok(TransitionKernel::new(n, n_actions, q0)?);
    }

    let mut eta_lo = 0.0;
    let mut eta_hi = 1.0;
    let (mut q_hi, mut kl_hi) = solve_rows(eta_hi);
    let mut doublings = 0;
    while kl_hi > sigma {
        eta_lo = eta_hi;
        eta_hi *= 2.0;
        let r = solve_rows(eta_hi);
        q_hi = r.0;
        kl_hi = r.1;
        doublings += 1;
        if doublings > 200 {
            return Err(KlError::NonConvergence {
                iterations: doublings,
                residual: kl_hi - sigma,
                best: q_hi,
            });
        }
    }

    let mut best = q_hi;
    let mut best_kl = kl_hi;
    for _ in 0..MAX_BISECT {
        if best_kl >= sigma - tol && best_kl <= sigma {
            break;
        }
        let mid = 0.5 * (eta_lo + eta_hi);
        let (q_mid, kl_mid) = solve_rows(mid);
        if kl_mid > sigma {
            eta_lo = mid;
        } else {
            eta_hi = mid;
            best = q_mid;
            best_kl = kl_mid;
        }
        if eta_hi - eta_lo <= f64::EPSILON * eta_hi {
            break;
        }
    }
    if best_kl > sigma {
        return Err(KlError::NonConvergence {
            iterations: MAX_BISECT,
            residual: best_kl - sigma,
            best,
        });
    }
    Ok(TransitionKernel::new(n, n_actions, best)?)
}

/// Enumerates the lattice `G_h = {b ∈ B_σ(ω) : b_sa ∈ h·Z₊}` in
/// lexicographic order over pairs (row-major), refusing with
/// [`KlError::GridExplosion`] when the grid would exceed `cap` points.
///
/// Zero-weight coordinates contribute only `b = 0` (their lattice would be
/// unbounded otherwise); the solver requires a full-support allocation
/// before relying on the grid.
pub fn budget_grid(
    sigma: f64,
    w: &Allocation,
    h: f64,
    cap: usize,
) -> Result<Vec<BudgetVector>, KlError> {
    assert!(h > 0.0, "grid resolution must be positive");
    assert!(sigma >= 0.0, "budget radius must be nonnegative");
    // Feasibility is tested on the integer lattice with a relative slack so
    // boundary points survive rounding.
    let limit = sigma / h;
    let slack = limit * 4.0 * f64::EPSILON + 1e-15;

    // Cheap counting pass first: walks the lattice without materializing
    // it, aborting as soon as the cap is crossed.
    let mut count: usize = 0;
    if !walk_grid(0, 0.0, limit, slack, w.weights(), &mut |_| {
        count += 1;
        count <= cap
    }) {
        return Err(KlError::GridExplosion {
            estimate: budget_grid_estimate(sigma, w, h).max(count as u128),
            cap,
        });
    }

    let mut grid = Vec::with_capacity(count);
    walk_grid(0, 0.0, limit, slack, w.weights(), &mut |ks| {
        grid.push(BudgetVector {
            n_states: w.n_states(),
            n_actions: w.n_actions(),
            b: ks.iter().map(|&k| k as f64 * h).collect(),
        });
        true
    });
    debug_assert_eq!(grid.len(), count);
    Ok(grid)
}

// Depth-first walk over {k ∈ Z₊^n : Σ w_i·k_i ≤ limit + slack} in
// lexicographic order; `visit` returns false to abort the walk.
fn walk_grid(
    idx: usize,
    used: f64,
    limit: f64,
    slack: f64,
    w: &[f64],
    visit: &mut dyn FnMut(&[u64]) -> bool,
) -> bool {
    fn rec(
        idx: usize,
        used: f64,
        limit: f64,
        slack: f64,
        w: &[f64],
        current: &mut Vec<u64>,
        visit: &mut dyn FnMut(&[u64]) -> bool,
    ) -> bool {
        if idx == w.len() {
            return visit(current);
        }
        let mut k = 0u64;
        loop {
            let cost = w[idx] * k as f64;
            if used + cost > limit + slack {
                break;
            }
            current[idx] = k;
            if !rec(idx + 1, used + cost, limit, slack, w, current, visit) {
                return false;
            }
            if w[idx] == 0.0 {
                break; // unbounded coordinate: enumerate only zero
            }
            k += 1;
        }
        current[idx] = 0;
        true
    }
    let mut current = vec![0u64; w.len()];
    rec(idx, used, limit, slack, w, &mut current, visit)
}

/// Upper estimate of the grid size: the product of per-coordinate ranges
/// (the box bound), saturating at `u128::MAX`.
pub fn budget_grid_estimate(sigma: f64, w: &Allocation, h: f64) -> u128 {
    let limit = sigma / h;
    let mut estimate: u128 = 1;
    for &weight in w.weights() {
        if weight == 0.0 {
            continue;
        }
        let per_coord = (limit / weight).floor();
        let count = if per_coord >= u128::MAX as f64 {
            u128::MAX
        } else {
            per_coord as u128 + 1
        };
        estimate = estimate.saturating_mul(count);
    }
    estimate
}

/// Coordinatewise floor of an arbitrary feasible budget onto the grid.
pub fn floor_to_grid(b: &BudgetVector, h: f64) -> BudgetVector {
    BudgetVector {
        n_states: b.n_states,
        n_actions: b.n_actions,
        b: b.values().iter().map(|v| (v / h).floor() * h).collect(),
    }
}
