//! Experiment harness behind the `ptest` binary: instance resolution,
//! δ-sweeps with seeded parallel trials, characteristic-time reports, and
//! CSV/JSON emission.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use policy_testing::instances::builtin_instance;
use policy_testing::kl::Allocation;
use policy_testing::mdp::{validate_instance, MdpInstance, Sign, ValidationReport};
use policy_testing::schema::{load_instance, SchemaError};
use policy_testing::seqtest::{run_test, TestConfig, TestError, ZetaSchedule};
use policy_testing::solver::{characteristic_time, SolverConfig, SolverError, SolverMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown instance `{0}` (not a builtin name and not a readable file)")]
    UnknownInstance(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error("invalid sweep spec: {0}")]
    BadSpec(String),
    #[error("cannot read sweep spec {path}: {source}")]
    SpecIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("instance fails validation:\n{report}")]
    Invalid { report: ValidationReport },
}

/// Resolves a builtin name or an instance file path. Returns the instance,
/// its allocation (uniform unless the file is a builtin with another
/// default), and a label for reports.
pub fn resolve_instance(spec: &str) -> Result<(MdpInstance, Allocation, String), CliError> {
    if let Some((instance, w)) = builtin_instance(spec) {
        return Ok((instance, w, spec.to_string()));
    }
    let path = Path::new(spec);
    if path.exists() {
        let instance = load_instance(path)?;
        let w = Allocation::uniform(instance.n_states(), instance.n_actions());
        return Ok((instance, w, path.display().to_string()));
    }
    Err(CliError::UnknownInstance(spec.to_string()))
}

/// Declarative sweep description (JSON or TOML file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Builtin name or instance file path.
    pub instance: String,
    /// Confidence levels to sweep, each in (0,1). Defaults to the
    /// log-spaced grid 1e-2, 1e-4, …, 1e-14.
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    /// Seeded trials per δ.
    pub trials: u32,
    /// Base seed; per-trial seeds are derived deterministically from it.
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SolverMode,
    #[serde(default = "default_stride")]
    pub check_stride: u64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
    /// Optional output path (overridden by --out).
    #[serde(default)]
    pub out: Option<String>,
    /// Optional wall-clock budget in seconds: δ groups run in order and
    /// the remaining groups are skipped once the budget is spent (skipped
    /// groups appear in the summary with zero trials). Rows of the groups
    /// that do run are unaffected.
    #[serde(default)]
    pub time_budget_s: Option<f64>,
    /// Optional practical-solver overrides (step constant, iteration cap,
    /// stationarity tolerance); defaults to the tuned profile.
    #[serde(default)]
    pub step_l: Option<f64>,
    #[serde(default)]
    pub max_inner_iters: Option<usize>,
    #[serde(default)]
    pub stationarity_tol: Option<f64>,
}

fn default_delta_grid() -> Vec<f64> {
    (1..=7).map(|k| 10f64.powi(-2 * k)).collect()
}

fn default_mode() -> SolverMode {
    SolverMode::Practical
}

fn default_stride() -> u64 {
    1
}

fn default_max_rounds() -> u64 {
    1_000_000
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CliError::SpecIo {
            path: path.display().to_string(),
            source,
        })?;
        let spec: SweepSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::BadSpec(e.to_string()))?,
            _ => serde_json::from_str(&text)
                .or_else(|_| toml::from_str(&text))
                .map_err(|e| CliError::BadSpec(e.to_string()))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.delta_grid.is_empty() {
            return Err(CliError::BadSpec("delta_grid is empty".into()));
        }
        if self.delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(CliError::BadSpec("every delta must lie in (0,1)".into()));
        }
        if self.trials == 0 {
            return Err(CliError::BadSpec("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// One data row of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub delta: f64,
    pub trial: u32,
    pub seed: u64,
    /// Rounds consumed (the stopping round, or the cap when exceeded).
    pub tau: u64,
    /// `+`/`-`, or none when the round cap was hit.
    pub decision: Option<Sign>,
    pub correct: Option<bool>,
    pub wall_ms: u64,
    pub solver_mode: String,
}

impl TrialRecord {
    /// Fields compared for reproducibility (everything except wall time).
    pub fn deterministic_key(&self) -> (u64, u32, u64, u64, Option<Sign>, Option<bool>, &str) {
        (
            self.delta.to_bits(),
            self.trial,
            self.seed,
            self.tau,
            self.decision,
            self.correct,
            &self.solver_mode,
        )
    }
}

/// Per-δ aggregate over decided trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub trials: u32,
    pub decided: u32,
    pub budget_exceeded: u32,
    pub errors: u32,
    pub error_fraction: f64,
    pub mean_tau: f64,
    pub std_error_tau: f64,
}

/// Complete sweep output.
#[derive(Debug, Clone, Serialize)]
pub struct SweepData {
    pub rows: Vec<TrialRecord>,
    pub summary: Vec<DeltaSummary>,
}

/// Derives one independent 64-bit seed per (base, index) pair.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Solver profile for runner contexts: tuned practical (certificates that
/// reach stationarity) or faithful.
pub fn solver_for_mode(mode: SolverMode) -> SolverConfig {
    match mode {
        SolverMode::Practical => SolverConfig::practical_tuned(),
        SolverMode::Faithful => SolverConfig::faithful(0.25),
    }
}

impl SweepSpec {
    fn solver_config(&self) -> SolverConfig {
        let mut config = solver_for_mode(self.mode);
        if let Some(v) = self.step_l {
            config.step_l = v;
        }
        if let Some(v) = self.max_inner_iters {
            config.max_inner_iters = v;
        }
        if let Some(v) = self.stationarity_tol {
            config.stationarity_tol = v;
        }
        config
    }
}

/// Runs the sweep, one δ group at a time (trials within a group execute in
/// parallel on the ambient rayon pool). Rows come back in deterministic
/// order and their contents do not depend on the pool size; the optional
/// wall-clock budget only decides how many groups run.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepData, CliError> {
    spec.validate()?;
    let (instance, w, _) = resolve_instance(&spec.instance)?;
    let report = validate_instance(&instance, &w);
    if !report.assumptions_hold() {
        return Err(CliError::Invalid { report });
    }

    let sweep_start = Instant::now();
    let mut rows: Vec<TrialRecord> = Vec::new();
    for (delta_idx, &delta) in spec.delta_grid.iter().enumerate() {
        if let Some(budget) = spec.time_budget_s {
            if delta_idx > 0 && sweep_start.elapsed().as_secs_f64() > budget {
                break;
            }
        }
        let group: Result<Vec<TrialRecord>, CliError> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let global_index = delta_idx as u64 * spec.trials as u64 + trial as u64;
                let seed = derive_seed(spec.seed, global_index);
                let config = TestConfig {
                    delta,
                    seed,
                    stream: 0,
                    check_stride: spec.check_stride,
                    max_rounds: spec.max_rounds,
                    solver: spec.solver_config(),
                    zeta: ZetaSchedule::default(),
                    record_trace: false,
                };
                let started = Instant::now();
                let record = run_test(&instance, &w, &config)?;
                Ok(TrialRecord {
                    delta,
                    trial,
                    seed,
                    tau: record.rounds_used(),
                    decision: record.decision(),
                    correct: record.correct,
                    wall_ms: started.elapsed().as_millis() as u64,
                    solver_mode: record.solver_mode,
                })
            })
            .collect();
        rows.extend(group?);
    }
    let summary = summarize(&spec.delta_grid, &rows);
    Ok(SweepData { rows, summary })
}

fn summarize(delta_grid: &[f64], rows: &[TrialRecord]) -> Vec<DeltaSummary> {
    delta_grid
        .iter()
        .map(|&delta| {
            let group: Vec<&TrialRecord> = rows.iter().filter(|r| r.delta == delta).collect();
            let decided: Vec<&&TrialRecord> =
                group.iter().filter(|r| r.decision.is_some()).collect();
            let errors = decided.iter().filter(|r| r.correct == Some(false)).count() as u32;
            let taus: Vec<f64> = decided.iter().map(|r| r.tau as f64).collect();
            let n = taus.len() as f64;
            let mean = if n > 0.0 {
                taus.iter().sum::<f64>() / n
            } else {
                f64::NAN
            };
            let std_error = if n > 1.0 {
                let var = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                f64::NAN
            };
            DeltaSummary {
                delta,
                trials: group.len() as u32,
                decided: decided.len() as u32,
                budget_exceeded: (group.len() - decided.len()) as u32,
                errors,
                error_fraction: if decided.is_empty() {
                    f64::NAN
                } else {
                    errors as f64 / decided.len() as f64
                },
                mean_tau: mean,
                std_error_tau: std_error,
            }
        })
        .collect()
}

/// Stable CSV schema for data rows.
pub const CSV_HEADER: &str = "delta,trial,seed,tau,decision,correct,wall_ms,solver_mode";

fn opt_sign(d: Option<Sign>) -> String {
    d.map_or_else(|| "none".to_string(), |s| s.to_string())
}

fn opt_bool(b: Option<bool>) -> String {
    b.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// Renders data rows as CSV (header + one line per trial).
pub fn rows_to_csv(rows: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.delta,
            r.trial,
            r.seed,
            r.tau,
            opt_sign(r.decision),
            opt_bool(r.correct),
            r.wall_ms,
            r.solver_mode
        ));
    }
    out
}

/// Renders the per-δ summary as CSV.
pub fn summary_to_csv(summary: &[DeltaSummary]) -> String {
    let mut out = String::from(
        "delta,trials,decided,budget_exceeded,errors,error_fraction,mean_tau,std_error_tau",
    );
    out.push('\n');
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.delta,
            s.trials,
            s.decided,
            s.budget_exceeded,
            s.errors,
            s.error_fraction,
            s.mean_tau,
            s.std_error_tau
        ));
    }
    out
}

/// Characteristic-time report for one instance/allocation.
#[derive(Debug, Clone, Serialize)]
pub struct CtimeReport {
    pub instance: String,
    pub t_star: f64,
    pub sigma_star: f64,
    /// `V^π_q(ρ)` at the closest sign-flipping kernel.
    pub minimizer_value: f64,
    /// Predicted slope of mean stopping time against ln(1/δ).
    pub predicted_slope: f64,
}

/// Computes `T*_ω(p)` and its witnesses; refuses instances that fail the
/// standing assumptions.
pub fn report_characteristic_time(
    label: &str,
    instance: &MdpInstance,
    w: &Allocation,
    config: &SolverConfig,
) -> Result<CtimeReport, CliError> {
    let report = validate_instance(instance, w);
    if !report.assumptions_hold() {
        return Err(CliError::Invalid { report });
    }
    let ct = characteristic_time(instance.kernel(), instance, w, config)?;
    Ok(CtimeReport {
        instance: label.to_string(),
        t_star: ct.t_star,
        sigma_star: ct.sigma_star,
        minimizer_value: ct.minimizer_value,
        predicted_slope: ct.t_star,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_spread() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    #[test]
    fn resolve_builtin_and_missing() {
        assert!(resolve_instance("two_state").is_ok());
        assert!(matches!(
            resolve_instance("no_such_thing"),
            Err(CliError::UnknownInstance(_))
        ));
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut spec = SweepSpec {
            instance: "two_state".into(),
            delta_grid: vec![0.1],
            trials: 1,
            seed: 0,
            mode: SolverMode::Practical,
            check_stride: 1,
            max_rounds: 1000,
            out: None,
            time_budget_s: None,
            step_l: None,
            max_inner_iters: None,
            stationarity_tol: None,
        };
        assert!(spec.validate().is_ok());
        spec.delta_grid = vec![1.5];
        assert!(spec.validate().is_err());
        spec.delta_grid = vec![0.1];
        spec.trials = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn default_delta_grid_is_log_spaced() {
        let spec: SweepSpec =
            serde_json::from_str(r#"{"instance": "two_state", "trials": 1, "seed": 0}"#).unwrap();
        assert_eq!(spec.delta_grid.len(), 7);
        assert_eq!(spec.delta_grid[0], 1e-2);
        assert_eq!(spec.delta_grid[6], 1e-14);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![TrialRecord {
            delta: 0.01,
            trial: 0,
            seed: 7,
            tau: 42,
            decision: Some(Sign::Plus),
            correct: Some(true),
            wall_ms: 3,
            solver_mode: "practical".into(),
        }];
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "0.01,0,7,42,+,true,3,practical");
    }

    #[test]
    fn slope_of_exact_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 6.0];
        assert!((least_squares_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
