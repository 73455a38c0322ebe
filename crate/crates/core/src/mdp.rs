//! Exact tabular-MDP primitives.
//!
//! A problem instance bundles a finite MDP (kernel `p`, reward `r`, initial
//! distribution `ρ`, discount `γ`) with a fixed target policy `π`. The test
//! decides the sign of the policy value `V^π_p(ρ)`; every other kernel `q`
//! is evaluated against the *same* `(π, r, ρ, γ)` data, so all operations
//! here take the kernel under evaluation as an explicit argument and only
//! read the policy-side data from the instance.
//!
//! Values are computed by solving the Bellman linear system
//! `(I − γ P_π) V = r_π` directly; discounted visitation distributions solve
//! the transposed system. Both matrices are strictly diagonally dominant for
//! `γ < 1`, so the dense LU solve is exact up to rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kl::Allocation;
use crate::linalg::solve_dense;

/// Tolerance for row-stochastic validation: rows whose sum drifts from 1 by
/// less than this are silently renormalized, larger drift is an error.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default boundary tolerance for deciding the sign of `V^π_p(ρ)`.
pub const VALUE_BOUNDARY_TOL: f64 = 1e-9;

/// Errors from instance construction and MDP primitives.
#[derive(Debug, Clone, Error)]
pub enum MdpError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} row {row} sums to {sum}, outside 1 ± {ROW_SUM_TOL}")]
    RowNotStochastic {
        what: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("{what} has a negative entry at index {index}: {value}")]
    NegativeEntry {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("discount factor must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("state/action counts must be positive")]
    EmptySpace,
    #[error("singular Bellman system (cannot occur for gamma < 1)")]
    SingularSystem,
    #[error("value {value} is within {tol} of the decision boundary")]
    BoundaryValue { value: f64, tol: f64 },
}

/// A row-stochastic transition kernel indexed `(s, a, s')`.
///
/// This one type plays three roles: the unknown truth `p`, the decision
/// variable `q` of the optimization problems, and the empirical estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Builds a kernel from a flat row-major `(s, a, s')` array, validating
    /// and renormalizing each row.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::EmptySpace);
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(MdpError::DimensionMismatch {
                what: "kernel",
                expected: n_states * n_actions * n_states,
                got: probs.len(),
            });
        }
        let mut kernel = Self {
            n_states,
            n_actions,
            probs,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = s * n_actions + a;
                normalize_row(kernel.row_mut(s, a), "kernel", row)?;
            }
        }
        Ok(kernel)
    }

    /// Builds a kernel from nested `[s][a][s']` rows.
    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Result<Self, MdpError> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for state_rows in &rows {
            if state_rows.len() != n_actions {
                return Err(MdpError::DimensionMismatch {
                    what: "kernel actions",
                    expected: n_actions,
                    got: state_rows.len(),
                });
            }
            for row in state_rows {
                if row.len() != n_states {
                    return Err(MdpError::DimensionMismatch {
                        what: "kernel row",
                        expected: n_states,
                        got: row.len(),
                    });
                }
                flat.extend_from_slice(row);
            }
        }
        Self::new(n_states, n_actions, flat)
    }

    /// The uniform kernel: every `(s,a)` row is `1/|S|`.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_states as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The distribution over next states for `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.probs[base..base + self.n_states]
    }

    fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &mut self.probs[base..base + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Flat row-major view, matching the layout expected by the projection
    /// and gradient routines.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

fn normalize_row(row: &mut [f64], what: &'static str, index: usize) -> Result<(), MdpError> {
    let mut sum = 0.0;
    for (i, v) in row.iter().enumerate() {
        if *v < 0.0 {
            return Err(MdpError::NegativeEntry {
                what,
                index: index * row.len() + i,
                value: *v,
            });
        }
        sum += *v;
    }
    if (sum - 1.0).abs() >= ROW_SUM_TOL {
        return Err(MdpError::RowNotStochastic {
            what,
            row: index,
            sum,
        });
    }
    if sum != 1.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

fn normalize_row_forced(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// A policy-testing instance: the tuple `(S, A, p, r, ρ, γ)` plus the target
/// policy `π`. Immutable after construction; all operations are pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpInstance {
    n_states: usize,
    n_actions: usize,
    kernel: TransitionKernel,
    reward: Vec<f64>,
    rho: Vec<f64>,
    gamma: f64,
    policy: Vec<f64>,
}

impl MdpInstance {
    /// Validates shapes and stochasticity. `reward` and `policy` are flat
    /// row-major `(s, a)`; `policy[s]` is a distribution over actions.
    ///
    /// Zero entries in `ρ` or `π` are allowed here; they only violate the
    /// standing assumptions, which [`validate_instance`] reports.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: TransitionKernel,
        reward: Vec<f64>,
        rho: Vec<f64>,
        gamma: f64,
        policy: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::EmptySpace);
        }
        if kernel.n_states() != n_states || kernel.n_actions() != n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "kernel shape",
                expected: n_states * n_actions,
                got: kernel.n_states() * kernel.n_actions(),
            });
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "reward",
                expected: n_states * n_actions,
                got: reward.len(),
            });
        }
        if rho.len() != n_states {
            return Err(MdpError::DimensionMismatch {
                what: "rho",
                expected: n_states,
                got: rho.len(),
            });
        }
        if policy.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "policy",
                expected: n_states * n_actions,
                got: policy.len(),
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MdpError::InvalidGamma(gamma));
        }
        let mut rho = rho;
        normalize_row(&mut rho, "rho", 0)?;
        let mut policy = policy;
        for s in 0..n_states {
            normalize_row(&mut policy[s * n_actions..(s + 1) * n_actions], "policy", s)?;
        }
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            reward,
            rho,
            gamma,
            policy,
        })
    }

    /// Like [`MdpInstance::new`], but renormalizes kernel, `ρ`, and `π` rows
    /// of any positive sum instead of requiring drift below `1e-12`. Used for
    /// data transcribed at limited precision.
    pub fn new_renormalized(
        n_states: usize,
        n_actions: usize,
        mut kernel_probs: Vec<f64>,
        reward: Vec<f64>,
        mut rho: Vec<f64>,
        gamma: f64,
        mut policy: Vec<f64>,
    ) -> Result<Self, MdpError> {
        for chunk in kernel_probs.chunks_mut(n_states.max(1)) {
            normalize_row_forced(chunk);
        }
        normalize_row_forced(&mut rho);
        for chunk in policy.chunks_mut(n_actions.max(1)) {
            normalize_row_forced(chunk);
        }
        let kernel = TransitionKernel::new(n_states, n_actions, kernel_probs)?;
        Self::new(n_states, n_actions, kernel, reward, rho, gamma, policy)
    }

    /// Replaces the true kernel, keeping the policy-side data.
    pub fn with_kernel(&self, kernel: TransitionKernel) -> Result<Self, MdpError> {
        Self::new(
            self.n_states,
            self.n_actions,
            kernel,
            self.reward.clone(),
            self.rho.clone(),
            self.gamma,
            self.policy.clone(),
        )
    }

    /// Shifts every reward entry by a constant (used to re-center the test
    /// threshold: testing `V > R` becomes testing the shifted value against 0
    /// via `r̃ = r − (1−γ)R`).
    pub fn with_threshold(&self, threshold: f64) -> Result<Self, MdpError> {
        let shift = (1.0 - self.gamma) * threshold;
        let reward = self.reward.iter().map(|r| r - shift).collect();
        Self::new(
            self.n_states,
            self.n_actions,
            self.kernel.clone(),
            reward,
            self.rho.clone(),
            self.gamma,
            self.policy.clone(),
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// The instance's own transition kernel (the kernel under test).
    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn policy_prob(&self, s: usize, a: usize) -> f64 {
        self.policy[s * self.n_actions + a]
    }

    pub fn policy(&self) -> &[f64] {
        &self.policy
    }

    /// `r_max = max_{s,a} |r(s,a)|`.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `r^π(s) = Σ_a π(a|s) r(s,a)`.
    pub fn r_pi(&self, s: usize) -> f64 {
        (0..self.n_actions)
            .map(|a| self.policy_prob(s, a) * self.reward(s, a))
            .sum()
    }

    /// `r^π(ρ) = Σ_s ρ_s r^π(s)`.
    pub fn r_pi_rho(&self) -> f64 {
        (0..self.n_states).map(|s| self.rho[s] * self.r_pi(s)).sum()
    }
}

/// State values, Q-values, and the scalar value `V^π_q(ρ)` of one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    /// `V^π_q(s)` per state.
    pub v: Vec<f64>,
    /// `Q^π_q(s,a)` in row-major `(s, a)` layout.
    pub q_values: Vec<f64>,
    /// `V^π_q(ρ)`.
    pub v_rho: f64,
}

/// Computes state values, Q-values, and `V^π_q(ρ)` for the given kernel by
/// solving the Bellman system `(I − γ P_π) V = r_π` exactly.
pub fn value_bundle(
    kernel: &TransitionKernel,
    instance: &MdpInstance,
) -> Result<ValueBundle, MdpError> {
    check_kernel_shape(kernel, instance)?;
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    let gamma = instance.gamma();

    // A = I − γ P_π with P_π(s,s') = Σ_a π(a|s) q(s'|s,a).
    let mut a_mat = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for s in 0..n {
        rhs[s] = instance.r_pi(s);
        for a in 0..n_actions {
            let pi_sa = instance.policy_prob(s, a);
            if pi_sa == 0.0 {
                continue;
            }
            let row = kernel.row(s, a);
            for (s_next, p) in row.iter().enumerate() {
                a_mat[s * n + s_next] -= gamma * pi_sa * p;
            }
        }
        a_mat[s * n + s] += 1.0;
    }
    let v = solve_dense(&mut a_mat, &mut rhs, n).ok_or(MdpError::SingularSystem)?;

    let mut q_values = vec![0.0; n * n_actions];
    for s in 0..n {
        for a in 0..n_actions {
            let row = kernel.row(s, a);
            let cont: f64 = row.iter().zip(&v).map(|(p, vs)| p * vs).sum();
            q_values[s * n_actions + a] = instance.reward(s, a) + gamma * cont;
        }
    }
    let v_rho = instance.rho().iter().zip(&v).map(|(r, vs)| r * vs).sum();
    Ok(ValueBundle { v, q_values, v_rho })
}

/// Start of the discounted visitation process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Draw `s(0) ~ ρ`, then `a(0) ~ π(·|s(0))`.
    InitialDistribution,
    /// Force `(s(0), a(0))` to a fixed pair.
    Pair(usize, usize),
}

/// Discounted visitation distributions of one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    /// `d(s)`: discounted state-visitation distribution.
    pub d_state: Vec<f64>,
    /// `d(s,a)` in row-major `(s, a)` layout; sums to 1.
    pub d_state_action: Vec<f64>,
}

impl Visitation {
    pub fn pair(&self, s: usize, a: usize, n_actions: usize) -> f64 {
        self.d_state_action[s * n_actions + a]
    }
}

/// Computes the discounted visitation distribution
/// `d(s,a) = (1−γ) Σ_t γ^t P[(s(t),a(t)) = (s,a)]` from the given start by
/// solving `(I − γ P̄ᵀ) d = (1−γ)·start` on the state–action chain.
pub fn visitation(
    kernel: &TransitionKernel,
    instance: &MdpInstance,
    start: Start,
) -> Result<Visitation, MdpError> {
    check_kernel_shape(kernel, instance)?;
    let n = instance.n_states();
    let n_actions = instance.n_actions();
    let pairs = n * n_actions;
    let gamma = instance.gamma();

    let mut start_vec = vec![0.0; pairs];
    match start {
        Start::InitialDistribution => {
            for s in 0..n {
                for a in 0..n_actions {
                    start_vec[s * n_actions + a] = instance.rho()[s] * instance.policy_prob(s, a);
                }
            }
        }
        Start::Pair(s, a) => {
            if s >= n || a >= n_actions {
                return Err(MdpError::DimensionMismatch {
                    what: "start pair",
                    expected: pairs,
                    got: s * n_actions + a,
                });
            }
            start_vec[s * n_actions + a] = 1.0;
        }
    }

    // Pair chain: (s,a) -> (s',a') with prob q(s'|s,a) π(a'|s').
    // d = (1−γ) start + γ P̄ᵀ d, i.e. (I − γ P̄ᵀ) d = (1−γ) start.
    let mut a_mat = vec![0.0; pairs * pairs];
    let mut rhs = vec![0.0; pairs];
    for (i, sv) in start_vec.iter().enumerate() {
        rhs[i] = (1.0 - gamma) * sv;
        a_mat[i * pairs + i] += 1.0;
    }
    for s in 0..n {
        for a in 0..n_actions {
            let from = s * n_actions + a;
            let row = kernel.row(s, a);
            for (s_next, p) in row.iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for a_next in 0..n_actions {
                    let to = s_next * n_actions + a_next;
                    let pi = instance.policy_prob(s_next, a_next);
                    if pi == 0.0 {
                        continue;
                    }
                    // transposed entry: contribution of d(from) to d(to)
                    a_mat[to * pairs + from] -= gamma * p * pi;
                }
            }
        }
    }
    let d_state_action =
        solve_dense(&mut a_mat, &mut rhs, pairs).ok_or(MdpError::SingularSystem)?;

    let mut d_state = vec![0.0; n];
    for s in 0..n {
        for a in 0..n_actions {
            d_state[s] += d_state_action[s * n_actions + a];
        }
    }
    Ok(Visitation {
        d_state,
        d_state_action,
    })
}

/// Extremal policy values over all kernels:
/// `max_q V^π_q(ρ) = r^π(ρ) + γ/(1−γ)·max_s r^π(s)` and the symmetric
/// minimum. Returned as `(max, min)`.
pub fn extremal_values(instance: &MdpInstance) -> (f64, f64) {
    let gamma = instance.gamma();
    let factor = gamma / (1.0 - gamma);
    let mut r_pi_max = f64::NEG_INFINITY;
    let mut r_pi_min = f64::INFINITY;
    for s in 0..instance.n_states() {
        let r = instance.r_pi(s);
        r_pi_max = r_pi_max.max(r);
        r_pi_min = r_pi_min.min(r);
    }
    let base = instance.r_pi_rho();
    (base + factor * r_pi_max, base + factor * r_pi_min)
}

/// The test answer: the sign of `V^π_q(ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sign::Plus => write!(f, "+"),
            Sign::Minus => write!(f, "-"),
        }
    }
}

/// Decides the sign of `V^π_q(ρ)`, failing with [`MdpError::BoundaryValue`]
/// when the value lies within `tol` of zero (the instance is then outside
/// the testable class).
pub fn answer(
    kernel: &TransitionKernel,
    instance: &MdpInstance,
    tol: f64,
) -> Result<Sign, MdpError> {
    let v = value_bundle(kernel, instance)?.v_rho;
    if v > tol {
        Ok(Sign::Plus)
    } else if v < -tol {
        Ok(Sign::Minus)
    } else {
        Err(MdpError::BoundaryValue { value: v, tol })
    }
}

/// Report of which standing assumptions an instance (plus sampling
/// allocation) satisfies. Report-only: nothing here is an error.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// `ρ_s > 0` for all states.
    pub rho_positive: bool,
    /// Strict reward inequality
    /// `−γ/(1−γ)·min_s r^π(s) > r^π(ρ) > −γ/(1−γ)·max_s r^π(s)`.
    pub reward_inequality: bool,
    /// `π(a|s) > 0` for all pairs.
    pub policy_full_support: bool,
    /// `ω_sa > 0` for all pairs.
    pub allocation_positive: bool,
    /// Empirical check on the provided kernel: `max_s V − min_s V > 0`.
    pub value_spread_positive: bool,
    /// `|V^π_p(ρ)|` exceeds the boundary tolerance.
    pub value_nonzero: bool,
    /// `V^π_p(ρ)` on the instance kernel, for reference.
    pub v_rho: f64,
}

impl ValidationReport {
    /// Both standing assumptions hold.
    pub fn assumptions_hold(&self) -> bool {
        self.test_valid() && self.full_support()
    }

    /// The instance is testable: positive `ρ`, strict reward inequality,
    /// and a value bounded away from the decision boundary.
    pub fn test_valid(&self) -> bool {
        self.rho_positive && self.reward_inequality && self.value_nonzero
    }

    /// Policy and allocation have full support.
    pub fn full_support(&self) -> bool {
        self.policy_full_support && self.allocation_positive
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        writeln!(f, "rho positive:           {}", mark(self.rho_positive))?;
        writeln!(
            f,
            "reward inequality:      {}",
            mark(self.reward_inequality)
        )?;
        writeln!(
            f,
            "policy full support:    {}",
            mark(self.policy_full_support)
        )?;
        writeln!(
            f,
            "allocation positive:    {}",
            mark(self.allocation_positive)
        )?;
        writeln!(
            f,
            "value spread positive:  {}",
            mark(self.value_spread_positive)
        )?;
        writeln!(f, "value nonzero:          {}", mark(self.value_nonzero))?;
        write!(f, "V(rho) = {}", self.v_rho)
    }
}

/// Checks the standing assumptions on an instance and allocation.
pub fn validate_instance(instance: &MdpInstance, allocation: &Allocation) -> ValidationReport {
    let gamma = instance.gamma();
    let factor = -gamma / (1.0 - gamma);
    let mut r_pi_max = f64::NEG_INFINITY;
    let mut r_pi_min = f64::INFINITY;
    for s in 0..instance.n_states() {
        let r = instance.r_pi(s);
        r_pi_max = r_pi_max.max(r);
        r_pi_min = r_pi_min.min(r);
    }
    let r_rho = instance.r_pi_rho();
    let reward_inequality = factor * r_pi_min > r_rho && r_rho > factor * r_pi_max;

    let rho_positive = instance.rho().iter().all(|&r| r > 0.0);
    let policy_full_support = instance.policy().iter().all(|&p| p > 0.0);
    let allocation_positive = allocation.weights().iter().all(|&w| w > 0.0);

    let (value_spread_positive, value_nonzero, v_rho) =
        match value_bundle(instance.kernel(), instance) {
            Ok(vb) => {
                let vmax = vb.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let vmin = vb.v.iter().cloned().fold(f64::INFINITY, f64::min);
                (
                    vmax - vmin > 0.0,
                    vb.v_rho.abs() > VALUE_BOUNDARY_TOL,
                    vb.v_rho,
                )
            }
            Err(_) => (false, false, f64::NAN),
        };

    ValidationReport {
        rho_positive,
        reward_inequality,
        policy_full_support,
        allocation_positive,
        value_spread_positive,
        value_nonzero,
        v_rho,
    }
}

fn check_kernel_shape(kernel: &TransitionKernel, instance: &MdpInstance) -> Result<(), MdpError> {
    if kernel.n_states() != instance.n_states() || kernel.n_actions() != instance.n_actions() {
        return Err(MdpError::DimensionMismatch {
            what: "kernel shape",
            expected: instance.n_pairs(),
            got: kernel.n_states() * kernel.n_actions(),
        });
    }
    Ok(())
}
