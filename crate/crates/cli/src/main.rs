mod commands;
mod config;
mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "monet-lab", version, about = "Loss-ablation lab for a MONet-style scene decomposition model")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sprite dataset.
    GenData(GenDataArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on the eval split.
    Eval(EvalArgs),
    /// Run every condition × seed of an experiment.
    Experiment(ExperimentArgs),
    /// Statistical tests over finished runs.
    Analyze(AnalyzeArgs),
    /// Mask-only gradient descent with frozen reconstruction errors.
    ProbeWta(ProbeArgs),
    /// Emit figures from finished runs.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_count: usize,
    /// Scene spec JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Dotted `key=value` override of the scene spec.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON with optional `model`, `loss` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Take the loss from a built-in condition (11, 01, 10, 00, NLL+M, IR+M, MSE+M, MW+M).
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, value_enum, default_value_t = FlavorArg::MultiDsprites)]
    pub flavor: FlavorArg,
    /// Start from the small 8×8 network.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset; defaults to the one the run was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Seed list: `1..5`, `1,2,7` or a single number.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, value_enum, default_value_t = TestArg::Friedman)]
    pub test: TestArg,
    #[arg(long, value_enum, default_value_t = CorrectionArg::Holm)]
    pub correction: CorrectionArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Where to write the analysis; defaults to `--runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long, value_enum)]
    pub loss: ProbeLossArg,
    #[arg(long)]
    pub k: usize,
    /// Squared errors, K per pixel; pixels follow each other.
    #[arg(long)]
    pub errors: String,
    /// σ per slot (NLL) or one σ (IR).
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long, default_value_t = 5_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 4.0)]
    pub lr: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset for mask galleries; defaults to the experiment's dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Eval images per run in mask galleries.
    #[arg(long, default_value_t = 4)]
    pub images: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PresetArg {
    #[value(name = "ablation-2x2")]
    Ablation2x2,
    LossReplacement,
    MwComparison,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FlavorArg {
    MultiDsprites,
    ObjectsRoom,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TestArg {
    Friedman,
    Wilcoxon,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum CorrectionArg {
    Holm,
    Fixed,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ProbeLossArg {
    Nll,
    Mw,
    Ir,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Box,
    Masks,
    Curves,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::ProbeWta(a) => commands::probe(a),
        Command::Plot(a) => plot::plot(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
