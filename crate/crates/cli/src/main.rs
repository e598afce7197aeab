mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Environment fallback for `--threads`.
const THREADS_ENV: &str = "BRONCHOPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bronchonav", version, about = "Bronchoscope pose registration against airway meshes")]
struct Cli {
    /// Seed for generation and multi-start draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to BRONCHOPT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Refiner settings file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a benchmark case from a phantom or a mesh with a centerline.
    Generate(GenerateArgs),
    /// Refine every pair of a dataset and score the results.
    Refine(RefineArgs),
    /// Score the initial poses of a dataset without refining.
    Evaluate(EvaluateArgs),
    /// Summarize a metrics CSV per difficulty level.
    Report(ReportArgs),
    /// Write a scale-invariant depth error map as PNG.
    Errormap(ErrormapArgs),
    /// Write a phantom mesh and its centerline.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Phantom to generate (`cylinder` or `y_branch`).
    #[arg(long, conflicts_with_all = ["mesh", "centerline"])]
    pub phantom: Option<String>,
    /// Airway surface (OBJ or STL); needs --centerline.
    #[arg(long, requires = "centerline")]
    pub mesh: Option<PathBuf>,
    /// Centerline JSON for --mesh.
    #[arg(long, requires = "mesh")]
    pub centerline: Option<PathBuf>,
    /// Perturbation preset: `bench`, `train` or `zero`.
    #[arg(long, default_value = "bench")]
    pub preset: String,
    /// Arc-length spacing of ground-truth poses (mm).
    #[arg(long, default_value_t = 5.0)]
    pub spacing: f64,
    /// Perturbations drawn per ground-truth pose.
    #[arg(long, default_value_t = 1)]
    pub per_pose: usize,
    /// Minimum co-visible fraction of the ground-truth view.
    #[arg(long, default_value_t = 0.3)]
    pub min_overlap: f64,
    /// Keep at most this many pairs (in frame order).
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Camera intrinsics JSON (default: 224x224, f = 100).
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long, default_value = "case_00")]
    pub case_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Settings override `key=value`; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory of pseudo-depth maps laid out as `<case>/<frame>.pfm`.
    #[arg(long, conflicts_with = "pseudo_scale")]
    pub pseudo_dir: Option<PathBuf>,
    /// Refine against the ground-truth render times this factor, with noise.
    #[arg(long)]
    pub pseudo_scale: Option<f32>,
    /// Standard deviation of the multiplicative noise for --pseudo-scale.
    #[arg(long, default_value_t = 0.0, requires = "pseudo_scale")]
    pub pseudo_noise: f32,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub metrics: PathBuf,
    /// Where to write the JSON summary (default: summary.json beside the CSV).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ErrormapArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// `cylinder` or `y_branch`.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Input(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Input("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let global = commands::Global {
        seed: cli.seed,
        config: cli.config,
    };
    match cli.command {
        Command::Generate(a) => commands::generate(&global, &a),
        Command::Refine(a) => commands::refine(&global, &a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Errormap(a) => commands::errormap(&a),
        Command::Phantom(a) => commands::phantom(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
