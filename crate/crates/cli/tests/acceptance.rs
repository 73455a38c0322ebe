//! Acceptance suite for the experiment harness: the stopping-time trend
//! against the characteristic time, and sweep determinism.

use policy_testing::solver::SolverMode;
use policy_testing_cli::{
    least_squares_slope, report_characteristic_time, resolve_instance, run_sweep, solver_for_mode,
    SweepSpec,
};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {id:2} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn base_spec() -> SweepSpec {
    SweepSpec {
        instance: "two_state".into(),
        delta_grid: vec![1e-4, 1e-8, 1e-12],
        trials: 30,
        seed: 90_210,
        mode: SolverMode::Practical,
        check_stride: 1,
        max_rounds: 500_000,
        out: None,
        time_budget_s: None,
        step_l: None,
        max_inner_iters: None,
        stationarity_tol: None,
    }
}

#[test]
fn criterion_11_stopping_time_trend() {
    let spec = base_spec();
    let (instance, w, label) = resolve_instance(&spec.instance).unwrap();
    let t_star = report_characteristic_time(
        &label,
        &instance,
        &w,
        &solver_for_mode(SolverMode::Practical),
    )
    .unwrap()
    .t_star;

    let data = run_sweep(&spec).unwrap();
    let xs: Vec<f64> = data.summary.iter().map(|s| (1.0 / s.delta).ln()).collect();
    let ys: Vec<f64> = data.summary.iter().map(|s| s.mean_tau).collect();
    let slope = least_squares_slope(&xs, &ys);
    let all_decided = data.summary.iter().all(|s| s.budget_exceeded == 0);
    let strictly_increasing = ys.windows(2).all(|w| w[1] > w[0]);

    let ok = all_decided
        && strictly_increasing
        && slope > 0.0
        && slope >= t_star / 3.0
        && slope <= 3.0 * t_star;
    report(
        11,
        "stopping-time trend vs characteristic time",
        ok,
        &format!(
            "T* = {t_star:.1}, slope = {slope:.1} (ratio {:.2}), mean τ = {:?}",
            slope / t_star,
            ys.iter().map(|t| *t as u64).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_12_sweep_determinism() {
    let mut spec = base_spec();
    spec.delta_grid = vec![1e-2, 1e-3];
    spec.trials = 3;
    spec.max_rounds = 100_000;
    let first = run_sweep(&spec).unwrap();
    let second = run_sweep(&spec).unwrap();
    let same_len = first.rows.len() == second.rows.len();
    let identical = same_len
        && first
            .rows
            .iter()
            .zip(&second.rows)
            .all(|(a, b)| a.deterministic_key() == b.deterministic_key());
    // at these confidence levels no decided trial may be wrong
    assert!(
        first.rows.iter().all(|r| r.correct != Some(false)),
        "sweep produced a wrong decision at delta <= 1e-2"
    );
    report(
        12,
        "sweep determinism",
        identical,
        &format!(
            "{} rows, re-run identical (excluding wall time): {identical}",
            first.rows.len()
        ),
    );
    assert!(identical);
}
