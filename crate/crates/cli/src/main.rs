mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use literati_core::annotation_store::{CoordSpace, SplitRatios};
use literati_core::eval_harness::{MatchMode, TableFormat};
use literati_core::report_parser::Level;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nlexicon format 1\nmaps: NPY 1.0 float32 [K, H, W] + JSON sidecar\n",
    "detections format 1\ntrial log format 1"
);

#[derive(Debug, Parser)]
#[command(name = "literati", version, long_version = LONG_VERSION, about = "Weakly supervised chest x-ray detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn radiology reports (JSONL) into referring expressions (JSONL).
    Parse(ParseArgs),
    /// Seeded train/val/test split of an id list.
    Split(SplitArgs),
    /// Append sampled negative ids to a positive id list.
    Mix(MixArgs),
    /// Decode a directory of logit maps into detections.
    Decode(DecodeArgs),
    /// Tune the decoder thresholds with TPE against annotated maps.
    Tune(TuneArgs),
    /// Score detections against COCO annotations.
    Eval(EvalArgs),
    /// Check analytic gradients of the reference heads.
    Gradcheck(GradcheckArgs),
    /// Synthetic end-to-end run on planted maps.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[arg(long)]
    reports: PathBuf,
    /// Defaults to the bundled lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "referring")]
    level: Level,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// One id per line, or a JSON array.
    #[arg(long)]
    ids: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: SplitRatios,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MixArgs {
    #[arg(long)]
    pos: PathBuf,
    #[arg(long)]
    neg: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    maps: PathBuf,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Space of the written boxes: map, net416 or native.
    #[arg(long, default_value = "map")]
    space: CoordSpace,
    /// COCO file supplying image sizes for native output.
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    /// Search space JSON; defaults to d in 1..=8, tau and alpha uniform.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// IOU threshold of the objective.
    #[arg(long, default_value_t = 0.1)]
    iou: f64,
    #[arg(long, default_value = "top1")]
    mode: MatchMode,
    /// Space the annotation boxes are expressed in.
    #[arg(long, default_value = "native")]
    ann_space: CoordSpace,
    /// Trial log destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, default_value = "top1")]
    mode: MatchMode,
    #[arg(long, default_value = "csv")]
    format: TableFormat,
    /// Row label in the rendered table.
    #[arg(long, default_value = "LITERATI")]
    method: String,
    #[arg(long, default_value = "native")]
    ann_space: CoordSpace,
    /// Per-image match results as JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases per op, seeded from `seed` upward.
    #[arg(long, default_value_t = 100)]
    cases: u64,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    maps: u64,
    #[arg(long, default_value = "csv")]
    format: TableFormat,
    /// Also write the maps and their COCO annotations here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_threads() -> Result<(), commands::CliError> {
    let Ok(raw) = std::env::var("LITERATI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| commands::CliError::Validation(format!("LITERATI_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::CliError::Validation(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Parse(a) => commands::parse(a),
        Command::Split(a) => commands::split(a),
        Command::Mix(a) => commands::mix(a),
        Command::Decode(a) => commands::decode(a),
        Command::Tune(a) => commands::tune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Demo(a) => commands::demo(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
