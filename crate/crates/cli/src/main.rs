//! `ptest` — sequential policy testing from the command line.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use policy_testing::kl::weighted_kl;
use policy_testing::mdp::{validate_instance, value_bundle};
use policy_testing::seqtest::{run_test, TestConfig, ZetaSchedule};
use policy_testing::solver::{nested_pgd, SolverMode};
use policy_testing_cli::{
    report_characteristic_time, resolve_instance, rows_to_csv, run_sweep, solver_for_mode,
    summary_to_csv, CliError, SweepSpec,
};

#[derive(Parser)]
#[command(
    name = "ptest",
    version,
    about = "Sequential policy testing in tabular MDPs"
)]
struct Cli {
    /// Worker threads (overrides the PTEST_THREADS environment variable;
    /// default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write output to this path instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for data-producing commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Faithful,
    Practical,
}

impl From<Mode> for SolverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Faithful => SolverMode::Faithful,
            Mode::Practical => SolverMode::Practical,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check an instance (builtin name or file) against the standing
    /// assumptions.
    Validate {
        /// Builtin name (two_state, three_state, five_state,
        /// nonconvex_example) or path to a JSON/TOML instance file.
        instance: String,
    },
    /// Solve the constrained value-minimization problem once.
    Solve {
        instance: String,
        /// Weighted-KL ball radius σ.
        #[arg(long)]
        sigma: f64,
        /// Faithful-mode accuracy ζ.
        #[arg(long, default_value_t = 0.25)]
        zeta: f64,
        #[arg(long, value_enum, default_value_t = Mode::Practical)]
        mode: Mode,
        /// Practical-mode step constant override (paper profile: 400).
        #[arg(long)]
        step_l: Option<f64>,
        /// Practical-mode iteration cap override (paper profile: 20).
        #[arg(long)]
        inner_iters: Option<usize>,
    },
    /// Report the characteristic time T*.
    Ctime {
        instance: String,
        #[arg(long, value_enum, default_value_t = Mode::Practical)]
        mode: Mode,
    },
    /// One sequential test run on a simulated generative model.
    Run {
        instance: String,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rounds between stopping checks.
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_rounds: u64,
        #[arg(long, value_enum, default_value_t = Mode::Practical)]
        mode: Mode,
        /// Record one trace entry per stopping check.
        #[arg(long)]
        trace: bool,
    },
    /// Run a δ-sweep described by a spec file.
    Sweep {
        /// Path to a JSON or TOML sweep spec.
        #[arg(long)]
        spec: PathBuf,
    },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("PTEST_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cli.threads))
        .build()
        .expect("thread pool");
    pool.install(|| run_command(&cli))
}

fn run_command(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { instance } => {
            let (mdp, w, label) = resolve_instance(instance)?;
            let report = validate_instance(&mdp, &w);
            println!("instance: {label}");
            println!("{report}");
            if !report.assumptions_hold() {
                std::process::exit(2);
            }
            Ok(())
        }
        Command::Solve {
            instance,
            sigma,
            zeta,
            mode,
            step_l,
            inner_iters,
        } => {
            let (mdp, w, label) = resolve_instance(instance)?;
            let mut config = solver_for_mode((*mode).into());
            config.zeta = *zeta;
            if let Some(v) = step_l {
                config.step_l = *v;
            }
            if let Some(v) = inner_iters {
                config.max_inner_iters = *v;
            }
            let result = nested_pgd(mdp.kernel(), &mdp, *sigma, &w, &config)?;
            let v_p = value_bundle(mdp.kernel(), &mdp)
                .expect("validated instance")
                .v_rho;
            let v_min = value_bundle(&result.argmin_kernel, &mdp)
                .expect("solver returns a valid kernel")
                .v_rho;
            let divergence = weighted_kl(&w, mdp.kernel(), &result.argmin_kernel);
            println!("instance: {label}");
            println!("V(rho) = {v_p}");
            println!("u_zeta = {}", result.u_value);
            println!("minimizer V(rho) = {v_min}");
            println!("minimizer weighted KL = {divergence}");
            println!("boxes evaluated = {}", result.boxes_evaluated);
            println!("inner iterations = {}", result.inner_iters_used);
            println!("converged = {}", result.converged);
            Ok(())
        }
        Command::Ctime { instance, mode } => {
            let (mdp, w, label) = resolve_instance(instance)?;
            let config = solver_for_mode((*mode).into());
            let report = report_characteristic_time(&label, &mdp, &w, &config)?;
            match cli.format {
                Format::Json => {
                    let text = serde_json::to_string_pretty(&report).expect("serializable");
                    emit(&cli.out, &format!("{text}\n"))?;
                }
                Format::Csv => {
                    println!("instance: {}", report.instance);
                    println!("T* = {}", report.t_star);
                    println!("sigma* (1/T*) = {}", report.sigma_star);
                    println!("minimizer V(rho) = {}", report.minimizer_value);
                    println!(
                        "predicted stopping-time slope vs ln(1/delta) = {}",
                        report.predicted_slope
                    );
                }
            }
            Ok(())
        }
        Command::Run {
            instance,
            delta,
            seed,
            stride,
            max_rounds,
            mode,
            trace,
        } => {
            let (mdp, w, _) = resolve_instance(instance)?;
            let config = TestConfig {
                delta: *delta,
                seed: *seed,
                stream: 0,
                check_stride: *stride,
                max_rounds: *max_rounds,
                solver: solver_for_mode((*mode).into()),
                zeta: ZetaSchedule::default(),
                record_trace: *trace,
            };
            let record = run_test(&mdp, &w, &config)?;
            let text = serde_json::to_string_pretty(&record).expect("serializable");
            emit(&cli.out, &format!("{text}\n"))?;
            Ok(())
        }
        Command::Sweep { spec } => {
            let spec = SweepSpec::load(spec)?;
            let data = run_sweep(&spec)?;
            let out = cli
                .out
                .clone()
                .or_else(|| spec.out.as_ref().map(PathBuf::from));
            match cli.format {
                Format::Csv => {
                    let csv = rows_to_csv(&data.rows);
                    match &out {
                        Some(path) => {
                            std::fs::write(path, &csv)?;
                            let summary_path = path.with_extension("summary.csv");
                            std::fs::write(&summary_path, summary_to_csv(&data.summary))?;
                            eprintln!(
                                "wrote {} rows to {} (summary: {})",
                                data.rows.len(),
                                path.display(),
                                summary_path.display()
                            );
                        }
                        None => {
                            print!("{csv}");
                            eprint!("{}", summary_to_csv(&data.summary));
                        }
                    }
                }
                Format::Json => {
                    let text = serde_json::to_string_pretty(&data).expect("serializable");
                    emit(&out, &format!("{text}\n"))?;
                }
            }
            Ok(())
        }
    }
}
