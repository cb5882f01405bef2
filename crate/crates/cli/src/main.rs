//! `pcqal`: evaluate, compare and fit point clouds from the command line.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qal_core::metrics::Tau;
use qal_core::{CloudFileFormat, ErrorClass};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "pcqal",
    version,
    about = "Quality-aware point-set losses and coverage metrics"
)]
#[command(
    after_help = "Exit codes: 0 success, 2 usage error, 3 input or parse error, 4 numerical failure.\n\
Set PCQAL_THREADS to cap worker threads (0 = one per core)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coverage, spurious-point and quality metrics for a pair or a manifest of pairs.
    Eval(EvalArgs),
    /// Loss value with its breakdown and optional gradient.
    Loss(LossArgs),
    /// Optimize prediction coordinates directly against a ground truth.
    Fit(FitArgs),
    /// Ablation sweep over one loss parameter, or all three stages in turn.
    Sweep(SweepArgs),
    /// Write a synthetic shape to a cloud file.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Emit JSON (the default).
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV.
    #[arg(long)]
    csv: bool,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    out: Option<std::path::PathBuf>,
    /// Echoed into reports; also seeds every random choice.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted cloud (.xyz, .ply or .pcq).
    #[arg(required_unless_present = "pairs", conflicts_with = "pairs")]
    pred: Option<std::path::PathBuf>,
    /// Ground-truth cloud.
    #[arg(required_unless_present = "pairs")]
    gt: Option<std::path::PathBuf>,
    /// Distance threshold, or `auto` for twice the ground truth's mean
    /// nearest-neighbor spacing. Repeat for several thresholds.
    #[arg(long, default_value = "0.03")]
    tau: Vec<Tau>,
    /// Tab-separated manifest of `pred<TAB>gt<TAB>label` lines.
    #[arg(long)]
    pairs: Option<std::path::PathBuf>,
    /// Input format, overriding the file extension.
    #[arg(long)]
    format: Option<CloudFileFormat>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct QalArgs {
    /// Tolerance below which matches are down-weighted.
    #[arg(long, default_value_t = 0.001)]
    eps: f64,
    /// Sharpness of the sigmoid weighting.
    #[arg(long, default_value_t = 10.0)]
    omega: f64,
    /// Weight of the attraction term.
    #[arg(long = "lambda", default_value_t = 1.0)]
    lambda_attr: f64,
    /// Also pull prediction points that no ground-truth point chose toward
    /// the ground truth (experimental).
    #[arg(long)]
    symmetric_attraction: bool,
}

#[derive(Args, Debug)]
struct LossArgs {
    pred: std::path::PathBuf,
    gt: std::path::PathBuf,
    /// One of qal, cd-l1, cd-l2, emd.
    #[arg(long, default_value = "qal")]
    loss: String,
    #[command(flatten)]
    qal: QalArgs,
    /// Include the gradient with respect to the prediction (not for emd).
    #[arg(long)]
    grad: bool,
    /// EMD solver: exact (equal sizes, at most 512 points) or entropic.
    #[arg(long, default_value = "exact")]
    emd_mode: String,
    #[arg(long)]
    format: Option<CloudFileFormat>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Ground-truth shape when no --gt file is given.
    #[arg(long, default_value = "ring-with-spur")]
    shape: String,
    #[arg(long, default_value_t = 512)]
    n_gt: usize,
    /// Shape of the initial prediction.
    #[arg(long, default_value = "uniform-sphere")]
    init_shape: String,
    #[arg(long, default_value_t = 256)]
    n_init: usize,
    /// gd, momentum or adam.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 1e-2)]
    step: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Threshold for the recorded metrics.
    #[arg(long, default_value_t = 0.03)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    metric_every: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Ground-truth cloud file; overrides --shape and --n-gt.
    #[arg(long)]
    gt: Option<std::path::PathBuf>,
    /// Initial prediction file; overrides --init-shape and --n-init.
    #[arg(long)]
    init: Option<std::path::PathBuf>,
    /// One of qal, cd-l1, cd-l2.
    #[arg(long, default_value = "qal")]
    loss: String,
    #[command(flatten)]
    qal: QalArgs,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Also write the metric curve as CSV.
    #[arg(long)]
    curve_csv: Option<std::path::PathBuf>,
    /// Also write the fitted cloud (format from the extension).
    #[arg(long)]
    final_cloud: Option<std::path::PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// eps, omega, lambda, or all for the three stages in sequence.
    #[arg(long)]
    stage: String,
    /// Comma-separated grid for a single stage. Defaults to 0,0.25,0.5,1,2
    /// for lambda.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eps_values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    omega_values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_values: Vec<f64>,
    /// Number of seeds per cell, counting up from --seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Fixed parameters for a single stage.
    #[command(flatten)]
    base: QalArgs,
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// ring-with-spur, cross3d, thin-plate or uniform-sphere.
    #[arg(long)]
    shape: String,
    #[arg(long, short = 'n', default_value_t = 512)]
    n_points: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output cloud file.
    #[arg(long, short)]
    out: std::path::PathBuf,
    /// Output format, overriding the file extension.
    #[arg(long)]
    format: Option<CloudFileFormat>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = commands::configure_threads() {
        eprintln!("pcqal: {err:#}");
        return ExitCode::from(exit_code(&err));
    }
    let result = match cli.command {
        Command::Eval(a) => commands::eval(a),
        Command::Loss(a) => commands::loss(a),
        Command::Fit(a) => commands::fit(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Gen(a) => commands::gen(a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(err) => {
            eprintln!("pcqal: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<qal_core::Error>() {
            return match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Input => EXIT_INPUT,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_INPUT
}
