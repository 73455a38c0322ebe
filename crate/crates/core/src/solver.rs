//! The lower-bound optimization machinery.
//!
//! The quantity driving both the stopping rule and the characteristic time
//! is `u_NO(σ, ω, p)`: the minimum of `V^π_p(ρ)·V^π_q(ρ)` over kernels `q`
//! within the weighted KL ball `Σ ω_sa KL_sa(p,q) ≤ σ`. The objective is
//! non-convex but the constraint set is convex, and on the reversed MDP the
//! problem is plain policy optimization, so projected gradient descent with
//! exact gradients applies.
//!
//! Two solver modes:
//!
//! * `Faithful` — decomposes the ball into product boxes `Q(b)` over a grid
//!   of budget vectors, runs a fixed number `M` of exact projected-gradient
//!   steps per box with step `1/L`, and returns the minimum over boxes. The
//!   grid resolution `h_ζ` and iteration count `M` come from closed forms in
//!   `ζ`, and the output `u_ζ` brackets the true value:
//!   `u_ζ ≥ u_NO ≥ u_ζ − ζ`. The theoretical grid is enumerable only for
//!   coarse `ζ` on tiny instances; a configurable cap refuses anything
//!   larger.
//! * `Practical` — a single loop of capped gradient steps (fixed step
//!   constant, default 400) with each iterate projected directly onto the
//!   global ball. Returns the best value found; a non-converged result is a
//!   flag, not an error.
//!
//! `σ_NC`, the inverse map (smallest ball radius at which the minimum drops
//! to a target `u`), is recovered by bisection over `σ`, and the
//! characteristic time is `T*_ω(p) = 1/σ_NC(0, ω, p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kl::{
    budget_grid, kl_row, project_global_kl, project_product_box, Allocation, BudgetVector, KlError,
};
use crate::linalg::solve_dense;
use crate::mdp::{extremal_values, value_bundle, MdpError, MdpInstance, TransitionKernel};
use crate::reversed::{reversed_gradient, reversed_value, smoothness_constants, ReversedView};

/// Errors from the solver layer.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("budget grid explosion: about {estimate} boxes exceed the cap {cap}")]
    GridExplosion { estimate: u128, cap: usize },
    #[error("faithful iteration count {estimate:.3e} is intractable")]
    IterationExplosion { estimate: f64 },
    #[error("target u = {u} outside the invertible range ({lo}, {hi}]")]
    RangeError { u: f64, lo: f64, hi: f64 },
    #[error("bisection bracket not found after {doublings} doublings (reached sigma = {reached})")]
    BracketFailure { doublings: usize, reached: f64 },
    #[error("brute-force oracle limited to |S| <= 3, |A| <= 2; got {n_states}x{n_actions}")]
    SizeGuard { n_states: usize, n_actions: usize },
    #[error("standing assumption violated: {0}")]
    AssumptionViolated(&'static str),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Kl(KlError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

impl From<KlError> for SolverError {
    fn from(e: KlError) -> Self {
        match e {
            KlError::GridExplosion { estimate, cap } => {
                SolverError::GridExplosion { estimate, cap }
            }
            other => SolverError::Kl(other),
        }
    }
}

/// Which solver pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Faithful,
    Practical,
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverMode::Faithful => write!(f, "faithful"),
            SolverMode::Practical => write!(f, "practical"),
        }
    }
}

impl std::str::FromStr for SolverMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "faithful" => Ok(SolverMode::Faithful),
            "practical" => Ok(SolverMode::Practical),
            other => Err(format!("unknown solver mode `{other}`")),
        }
    }
}

/// Solver parameters. `zeta` controls the faithful-mode guarantees; the
/// practical mode uses the fixed step constant and iteration cap instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: SolverMode,
    /// Faithful-mode accuracy target ζ > 0.
    pub zeta: f64,
    /// Practical-mode cap on gradient steps per solve.
    pub max_inner_iters: usize,
    /// Practical-mode fixed step constant (step size is its inverse).
    pub step_l: f64,
    /// Maximum number of budget-grid points the faithful mode will enumerate.
    pub grid_cap: usize,
    /// Tolerance passed to the KL projections.
    pub projection_tol: f64,
    /// Value-space tolerance for the σ-bisection of `sigma_nc`.
    pub bisection_tol: f64,
    /// σ-space interval width at which the bisection stops.
    pub sigma_tol: f64,
    /// Practical mode reports convergence when the last projected-gradient
    /// displacement (infinity norm) falls below this.
    pub stationarity_tol: f64,
    /// Boundary tolerance for treating `V^π_p(ρ)` as zero.
    pub value_tol: f64,
}

impl SolverConfig {
    /// The capped heuristic exactly as reported for the reference
    /// experiments: fixed step constant 400, at most 20 gradient steps.
    ///
    /// This certificate rarely reaches stationarity on γ ≈ 0.9 instances;
    /// see [`SolverConfig::practical_tuned`] for the profile the sequential
    /// test uses by default.
    pub fn practical() -> Self {
        Self {
            mode: SolverMode::Practical,
            zeta: 0.25,
            max_inner_iters: 20,
            step_l: 400.0,
            grid_cap: 1_000_000,
            projection_tol: 1e-10,
            bisection_tol: 1e-6,
            sigma_tol: 1e-7,
            stationarity_tol: 1e-3,
            value_tol: 1e-9,
        }
    }

    /// Practical mode with enough gradient steps (and a step size matched
    /// to the effective smoothness of small discounted instances) for the
    /// certificate to reach stationarity. Measured on the 2×2 benchmark:
    /// the minimum agrees with the brute-force oracle to ~1e-3, and stopped
    /// sequential runs decide correctly, where the raw capped profile stops
    /// on loose certificates and overshoots the error budget.
    pub fn practical_tuned() -> Self {
        Self {
            max_inner_iters: 60,
            step_l: 100.0,
            ..Self::practical()
        }
    }

    pub fn faithful(zeta: f64) -> Self {
        Self {
            mode: SolverMode::Faithful,
            zeta,
            ..Self::practical()
        }
    }

    pub fn with_zeta(&self, zeta: f64) -> Self {
        Self {
            zeta,
            ..self.clone()
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::practical()
    }
}

/// Outcome of one `u_NO` solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// The computed upper approximation `u_ζ` of `u_NO(σ, ω, p)`.
    pub u_value: f64,
    /// The feasible kernel achieving `u_value`.
    pub argmin_kernel: TransitionKernel,
    /// Gradient steps run (per box in faithful mode).
    pub inner_iters_used: usize,
    /// Product boxes evaluated (1 in practical mode).
    pub boxes_evaluated: usize,
    /// Practical mode: gradient mapping reached stationarity. Faithful mode
    /// always reports true (its guarantee is the ζ-bracket, not a flag).
    pub converged: bool,
}

/// Approximately solves `u_NO(σ, ω, p)` for the instance's policy data with
/// the hypothesized kernel `p` (the instance's own kernel is not read).
///
/// Returns 0 immediately when `|V^π_p(ρ)|` is inside the boundary
/// tolerance: every `u_NO` value is then zero as well.
pub fn nested_pgd(
    p: &TransitionKernel,
    instance: &MdpInstance,
    sigma: f64,
    w: &Allocation,
    config: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    let v_p = value_bundle(p, instance)?.v_rho;
    if v_p.abs() <= config.value_tol {
        return Ok(SolveResult {
            u_value: 0.0,
            argmin_kernel: p.clone(),
            inner_iters_used: 0,
            boxes_evaluated: 0,
            converged: true,
        });
    }
    match config.mode {
        SolverMode::Faithful => faithful_solve(p, instance, sigma, w, config, v_p),
        SolverMode::Practical => practical_solve(p, instance, sigma, w, config, v_p),
    }
}

fn faithful_solve(
    p: &TransitionKernel,
    instance: &MdpInstance,
    sigma: f64,
    w: &Allocation,
    config: &SolverConfig,
    v_p: f64,
) -> Result<SolveResult, SolverError> {
    if config.zeta <= 0.0 || config.zeta.is_nan() {
        return Err(SolverError::InvalidConfig("faithful mode needs zeta > 0"));
    }
    if w.weights().iter().any(|&x| x <= 0.0) {
        // The product-box decomposition covers the global ball only when
        // every pair carries weight; a zero-weight pair makes its budget
        // coordinate unbounded.
        return Err(SolverError::AssumptionViolated(
            "faithful mode requires a full-support allocation",
        ));
    }
    let view = ReversedView::new(instance);
    let n_states = instance.n_states() as f64;
    let n_actions = instance.n_actions() as f64;
    let pair_states = n_states * n_actions;
    let gamma = instance.gamma();
    let r_max = instance.r_max();
    let zeta = config.zeta;

    let (_, step_constant) = smoothness_constants(&view);
    let h_zeta = zeta * zeta * (1.0 - gamma).powi(4)
        / (18.0 * n_states * n_states * n_actions * n_actions * v_p * v_p * r_max * r_max);
    let m_estimate = 384.0
        * (gamma * n_states + 1.0)
        * pair_states
        * r_max
        * v_p.abs()
        * view.inv_rho_bar_inf().powi(2)
        / ((1.0 - gamma).powi(5) * zeta);

    let grid = budget_grid(sigma, w, h_zeta, config.grid_cap)?;
    // Zero budgets pin their iterate at p without any gradient steps, so
    // the iteration count only matters when some box actually opens up.
    let needs_descent = grid.iter().any(|b| b.values().iter().any(|&v| v > 0.0));
    if needs_descent && (!m_estimate.is_finite() || m_estimate > 1e12) {
        return Err(SolverError::IterationExplosion {
            estimate: m_estimate,
        });
    }
    let m = if needs_descent {
        m_estimate.ceil().max(1.0) as u64
    } else {
        1
    };
    let evaluated: Result<Vec<(usize, f64, TransitionKernel)>, SolverError> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, b)| {
            let (kernel, u_b) = inner_pgd(p, b, m, step_constant, &view, config.projection_tol)?;
            Ok((idx, u_b, kernel))
        })
        .collect();
    let mut evaluated = evaluated?;
    // deterministic reduction: min by value, ties to the lexicographically
    // first budget (= lowest enumeration index)
    evaluated.sort_by_key(|(idx, _, _)| *idx);
    let mut best: Option<(f64, TransitionKernel)> = None;
    for (_, u_b, kernel) in evaluated {
        let better = match &best {
            None => true,
            Some((u, _)) => u_b < *u,
        };
        if better {
            best = Some((u_b, kernel));
        }
    }
    let (u_value, argmin_kernel) = best.expect("budget grid always contains the origin");
    Ok(SolveResult {
        u_value,
        argmin_kernel,
        inner_iters_used: m as usize,
        boxes_evaluated: grid.len(),
        converged: true,
    })
}

/// Inner loop of the faithful solver: `m` exact projected-gradient steps on
/// the product box `Q(b)`, starting from `p`, descending
/// `sign(V^π_p(ρ))·V̄` with step `1/l`. Returns the final iterate and its
/// objective value `V^π_p(ρ)·V̄(ρ̄)`.
pub fn inner_pgd(
    p: &TransitionKernel,
    b: &BudgetVector,
    m: u64,
    l: f64,
    view: &ReversedView<'_>,
    projection_tol: f64,
) -> Result<(TransitionKernel, f64), SolverError> {
    if m == 0 {
        return Err(SolverError::InvalidConfig(
            "inner iteration count must be >= 1",
        ));
    }
    let instance = view.base();
    let v_p = value_bundle(p, instance)?.v_rho;
    if b.values().iter().all(|&v| v == 0.0) {
        // Q(0) = {p}: the projection pins the iterate, skip the loop.
        let u = v_p * reversed_value(p, view)?;
        return Ok((p.clone(), u));
    }
    let sign = if v_p >= 0.0 { 1.0 } else { -1.0 };
    let step = sign / l;
    let mut q = p.clone();
    let mut x = vec![0.0; p.as_slice().len()];
    for _ in 0..m {
        let grad = reversed_gradient(&q, view)?;
        for (xi, (qi, gi)) in x.iter_mut().zip(q.as_slice().iter().zip(grad.as_slice())) {
            *xi = qi - step * gi;
        }
        q = project_product_box(&x, p, b, projection_tol)?;
    }
    let u = v_p * reversed_value(&q, view)?;
    Ok((q, u))
}

fn practical_solve(
    p: &TransitionKernel,
    instance: &MdpInstance,
    sigma: f64,
    w: &Allocation,
    config: &SolverConfig,
    v_p: f64,
) -> Result<SolveResult, SolverError> {
    if config.max_inner_iters == 0 {
        return Err(SolverError::InvalidConfig(
            "practical iteration cap must be >= 1",
        ));
    }
    let view = ReversedView::new(instance);
    let sign = if v_p >= 0.0 { 1.0 } else { -1.0 };
    let step = sign / config.step_l;

    let mut q = p.clone();
    let mut best_u = v_p * v_p;
    let mut best_kernel = p.clone();
    let mut x = vec![0.0; p.as_slice().len()];
    let mut last_disp = f64::INFINITY;
    let mut iters = 0;
    for _ in 0..config.max_inner_iters {
        let grad = reversed_gradient(&q, &view)?;
        for (xi, (qi, gi)) in x.iter_mut().zip(q.as_slice().iter().zip(grad.as_slice())) {
            *xi = qi - step * gi;
        }
        let q_next = project_global_kl(&x, p, w, sigma, config.projection_tol)?;
        last_disp = q
            .as_slice()
            .iter()
            .zip(q_next.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let u = v_p * value_bundle(&q_next, instance)?.v_rho;
        if u < best_u {
            best_u = u;
            best_kernel = q_next.clone();
        }
        q = q_next;
        iters += 1;
        if last_disp <= 1e-13 {
            break;
        }
    }
    Ok(SolveResult {
        u_value: best_u,
        argmin_kernel: best_kernel,
        inner_iters_used: iters,
        boxes_evaluated: 1,
        converged: last_disp <= config.stationarity_tol,
    })
}

/// All simplex lattice rows with denominator `d` in lexicographic order.
pub(crate) fn simplex_lattice(d: usize, len: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; len];
    fn rec(idx: usize, remaining: usize, d: usize, current: &mut [usize], out: &mut Vec<Vec<f64>>) {
        if idx + 1 == current.len() {
            current[idx] = remaining;
            out.push(current.iter().map(|&k| k as f64 / d as f64).collect());
            return;
        }
        for k in 0..=remaining {
            current[idx] = k;
            rec(idx + 1, remaining - k, d, current, out);
        }
    }
    if len == 0 {
        return out;
    }
    rec(0, d, d, &mut current, &mut out);
    out
}

// Direct value computation for lattice leaves: builds P_pi and solves the
// small Bellman system on the stack-sized buffers handed in.
fn value_rho_from_rows(
    rows: &[&[f64]],
    instance: &MdpInstance,
    a_buf: &mut [f64],
    b_buf: &mut [f64],
) -> f64 {
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    let gamma = instance.gamma();
    for v in a_buf.iter_mut() {
        *v = 0.0;
    }
    for s in 0..n {
        b_buf[s] = instance.r_pi(s);
        for a in 0..n_actions {
            let pi = instance.policy_prob(s, a);
            if pi == 0.0 {
                continue;
            }
            let row = rows[s * n_actions + a];
            for (s_next, p) in row.iter().enumerate() {
                a_buf[s * n + s_next] -= gamma * pi * p;
            }
        }
        a_buf[s * n + s] += 1.0;
    }
    let v = solve_dense(&mut a_buf[..n * n], &mut b_buf[..n], n)
        .expect("discounted Bellman system is nonsingular");
    instance.rho().iter().zip(&v).map(|(r, vs)| r * vs).sum()
}

/// Brute-force oracle for `u_NO(σ, ω, p)`: minimizes
/// `V^π_p(ρ)·V^π_q(ρ)` over the lattice of kernels whose rows have
/// denominator `⌈1/resolution⌉`, within the weighted KL ball (slack 1e-9).
///
/// When no lattice point is feasible (possible at σ ≈ 0 with `p` off the
/// lattice), falls back to the lattice point of smallest weighted KL — the
/// row-wise nearest point, exact because the divergence separates across
/// rows.
///
/// Guarded to `|S| ≤ 3`, `|A| ≤ 2`.
pub fn u_no_bruteforce(
    p: &TransitionKernel,
    instance: &MdpInstance,
    sigma: f64,
    w: &Allocation,
    resolution: f64,
) -> Result<f64, SolverError> {
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    if n > 3 || n_actions > 2 {
        return Err(SolverError::SizeGuard {
            n_states: n,
            n_actions,
        });
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(SolverError::InvalidConfig("resolution must be in (0, 1]"));
    }
    let v_p = value_bundle(p, instance)?.v_rho;
    let d = (1.0 / resolution).ceil() as usize;
    let lattice = simplex_lattice(d, n);
    const SLACK: f64 = 1e-9;

    // Per-pair candidates sorted by weighted KL cost, pruned per row.
    let pairs = n * n_actions;
    let mut candidates: Vec<Vec<(f64, usize)>> = Vec::with_capacity(pairs);
    for s in 0..n {
        for a in 0..n_actions {
            let weight = w.get(s, a);
            let mut list: Vec<(f64, usize)> = lattice
                .iter()
                .enumerate()
                .filter_map(|(i, row)| {
                    let kl = kl_row(p.row(s, a), row);
                    let cost = if weight > 0.0 { weight * kl } else { 0.0 };
                    if cost.is_finite() && cost <= sigma + SLACK {
                        Some((cost, i))
                    } else {
                        None
                    }
                })
                .collect();
            list.sort_by(|l, r| l.0.partial_cmp(&r.0).unwrap());
            candidates.push(list);
        }
    }

    // DFS over pairs with partial-cost pruning; candidate lists are sorted
    // by cost so the scan can stop at the first infeasible entry.
    struct Search<'a> {
        sigma: f64,
        candidates: &'a [Vec<(f64, usize)>],
        lattice: &'a [Vec<f64>],
        chosen: Vec<&'a [f64]>,
        instance: &'a MdpInstance,
        v_p: f64,
        a_buf: Vec<f64>,
        b_buf: Vec<f64>,
        best: f64,
        found: bool,
    }

    impl Search<'_> {
        fn run(&mut self, pair: usize, used: f64) {
            if pair == self.candidates.len() {
                let value = self.v_p
                    * value_rho_from_rows(
                        &self.chosen,
                        self.instance,
                        &mut self.a_buf,
                        &mut self.b_buf,
                    );
                if value < self.best {
                    self.best = value;
                }
                self.found = true;
                return;
            }
            for i in 0..self.candidates[pair].len() {
                let (cost, idx) = self.candidates[pair][i];
                if used + cost > self.sigma + SLACK {
                    break;
                }
                self.chosen[pair] = &self.lattice[idx];
                self.run(pair + 1, used + cost);
            }
        }
    }

    let mut search = Search {
        sigma,
        candidates: &candidates,
        lattice: &lattice,
        chosen: vec![&lattice[0]; pairs],
        instance,
        v_p,
        a_buf: vec![0.0; n * n],
        b_buf: vec![0.0; n],
        best: f64::INFINITY,
        found: false,
    };
    search.run(0, 0.0);

    if search.found {
        return Ok(search.best);
    }
    // Nearest fallback: weighted KL separates across rows, so the nearest
    // lattice kernel picks each row's cheapest candidate independently.
    let (mut a_buf, mut b_buf) = (search.a_buf, search.b_buf);
    let mut rows: Vec<&[f64]> = Vec::with_capacity(pairs);
    for s in 0..n {
        for a in 0..n_actions {
            let weight = w.get(s, a);
            let nearest = lattice
                .iter()
                .min_by(|l, r| {
                    let kl_l = weight * kl_row(p.row(s, a), l);
                    let kl_r = weight * kl_row(p.row(s, a), r);
                    kl_l.partial_cmp(&kl_r).unwrap()
                })
                .expect("lattice is nonempty");
            rows.push(nearest);
        }
    }
    Ok(v_p * value_rho_from_rows(&rows, instance, &mut a_buf, &mut b_buf))
}

/// Inverts `u_NO` by bisection: the smallest `σ` at which
/// `u_NO(σ, ω, p) ≤ u`. Valid targets lie in
/// `(min_q V_p(ρ)V_q(ρ), V_p(ρ)²]`; the upper endpoint maps to `σ = 0`.
pub fn sigma_nc(
    u: f64,
    w: &Allocation,
    p: &TransitionKernel,
    instance: &MdpInstance,
    config: &SolverConfig,
) -> Result<f64, SolverError> {
    let v_p = value_bundle(p, instance)?.v_rho;
    let (vmax, vmin) = extremal_values(instance);
    let u_at_zero = v_p * v_p;
    let u_inf = if v_p > 0.0 { v_p * vmin } else { v_p * vmax };
    if v_p.abs() <= config.value_tol || u > u_at_zero + 1e-12 || u <= u_inf {
        return Err(SolverError::RangeError {
            u,
            lo: u_inf,
            hi: u_at_zero,
        });
    }
    if u >= u_at_zero - 1e-12 {
        return Ok(0.0);
    }

    let eval = |sigma: f64| -> Result<f64, SolverError> {
        Ok(nested_pgd(p, instance, sigma, w, config)?.u_value)
    };

    // bracket [lo, hi] with u_NO(lo) >= u >= u_NO(hi)
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut f_hi = eval(hi)?;
    let mut doublings = 0;
    while f_hi > u {
        lo = hi;
        hi *= 2.0;
        f_hi = eval(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(SolverError::BracketFailure {
                doublings,
                reached: hi,
            });
        }
    }

    let mut iters = 0;
    while hi - lo > config.sigma_tol && iters < 200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval(mid)?;
        if f_mid > u {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    Ok(0.5 * (lo + hi))
}

/// The characteristic time and its witnesses.
#[derive(Debug, Clone)]
pub struct CharacteristicTime {
    /// `T*_ω(p) = 1/σ_NC(0, ω, p)`.
    pub t_star: f64,
    /// The minimal weighted KL divergence to a sign-flipping kernel.
    pub sigma_star: f64,
    /// The (approximate) closest sign-flipping kernel.
    pub minimizer: TransitionKernel,
    /// `V^π_q(ρ)` at the minimizer.
    pub minimizer_value: f64,
}

/// Computes the characteristic time of an instance under allocation `ω`.
pub fn characteristic_time(
    p: &TransitionKernel,
    instance: &MdpInstance,
    w: &Allocation,
    config: &SolverConfig,
) -> Result<CharacteristicTime, SolverError> {
    let sigma_star = sigma_nc(0.0, w, p, instance, config)?;
    let solve = nested_pgd(p, instance, sigma_star, w, config)?;
    let minimizer_value = value_bundle(&solve.argmin_kernel, instance)?.v_rho;
    Ok(CharacteristicTime {
        t_star: 1.0 / sigma_star,
        sigma_star,
        minimizer: solve.argmin_kernel,
        minimizer_value,
    })
}
