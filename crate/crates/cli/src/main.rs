//! Command-line front-end for the contingency screening engine.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use n1plus_core::{Error as CoreError, FaultKind, SolveMethod};

#[derive(Parser)]
#[command(
    name = "n1plus",
    version,
    about = "Dynamic N-1 contingency screening: spectral swing-equation solvers, \
             eigenvalue perturbation, and rare-event overload risk estimation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Grid document (JSON, format "n1plus-grid/1").
    #[arg(long, global = true, value_name = "PATH")]
    grid: Option<PathBuf>,

    /// Random seed; every command is deterministic given the seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Simulation horizon T in seconds.
    #[arg(long = "T", global = true, default_value_t = 20.0, value_name = "SECONDS")]
    t_end: f64,

    /// Sampling step Δt in seconds.
    #[arg(long, global = true, default_value_t = 0.01, value_name = "SECONDS")]
    dt: f64,

    /// Directory for emitted artifacts.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,

    /// Machine output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    JsonLines,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    ThreePhase,
    SinglePhase,
}

impl From<KindArg> for FaultKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::ThreePhase => FaultKind::ThreePhase,
            KindArg::SinglePhase => FaultKind::SinglePhase,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Exact,
    Perturbative,
}

fn solve_method(solver: SolverArg, m: usize) -> SolveMethod {
    match solver {
        SolverArg::Exact => SolveMethod::Exact,
        SolverArg::Perturbative => SolveMethod::Perturbative { steps: m },
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Mc,
    Ce,
}

#[derive(Subcommand)]
enum Command {
    /// Load a grid document and report whether it satisfies every model
    /// invariant.
    Validate,

    /// Simulate one fault scenario and write the trajectory plus an
    /// overload summary.
    Simulate {
        /// Faulted line index.
        #[arg(long)]
        line: usize,
        #[arg(long, value_enum, default_value_t = KindArg::ThreePhase)]
        kind: KindArg,
        /// Fault duration in seconds.
        #[arg(long, allow_negative_numbers = true)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
        solver: SolverArg,
        /// Step count for the perturbative solver.
        #[arg(long, default_value_t = 10)]
        m: usize,
    },

    /// Fault every line in turn at a fixed kind and duration; emit the
    /// overload matrix and the ranked critical-line list.
    Screen {
        #[arg(long, value_enum, default_value_t = KindArg::ThreePhase)]
        kind: KindArg,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = SolverArg::Perturbative)]
        solver: SolverArg,
        #[arg(long, default_value_t = 10)]
        m: usize,
    },

    /// Estimate per-line overload exceedance probabilities by plain Monte
    /// Carlo or the cross-entropy pipeline.
    Estimate {
        #[arg(long, value_enum, default_value_t = EstimatorArg::Ce)]
        method: EstimatorArg,
        /// Exceedance threshold γ in seconds.
        #[arg(long)]
        gamma: f64,
        /// Elite fraction of the cross-entropy iterations.
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        #[arg(long, default_value_t = 1000)]
        n_per_iter: usize,
        /// Final estimation sample count.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Nominal exponential rate of fault durations.
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = KindArg::ThreePhase)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = SolverArg::Perturbative)]
        solver: SolverArg,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon_mix: f64,
        #[arg(long, default_value_t = 0.7)]
        smoothing: f64,
        /// Refit the proposal per line instead of reusing the global one.
        #[arg(long)]
        per_line_reoptimize: bool,
    },

    /// Benchmark the solvers over every single-line fault, sweeping the
    /// perturbation step count.
    Bench {
        /// Step counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,10,40,100")]
        m_list: Vec<usize>,
        /// Fault durations evaluated per line.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0")]
        taus: Vec<f64>,
        #[arg(long, value_enum, default_value_t = KindArg::ThreePhase)]
        kind: KindArg,
        /// Timed repetitions per method.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// Untimed warm-up repetitions.
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Skip the Runge–Kutta reference row.
        #[arg(long)]
        no_reference: bool,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Parse(_))
        | Some(CoreError::Validation(_))
        | Some(CoreError::Io(_))
        | None => 2,
        Some(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
