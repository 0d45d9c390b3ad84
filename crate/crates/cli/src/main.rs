//! `mvtn` command-line tool.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvtn::trainer::{Direction, SceneLoss, ViewMode};

/// Bad flags or config; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "mvtn", version, about = "Multi-view point-cloud classification with learned camera views")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "MVTN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset manifest and point caches.
    GenData(GenDataArgs),
    /// Train a model and write metrics, checkpoint and view renders.
    Train(TrainArgs),
    /// Evaluate a trained run on its test split.
    Eval(RunArgs),
    /// Render one shape from a view configuration to a PNG grid.
    Render(RenderArgs),
    /// Shape retrieval with trained signatures.
    Retrieve(RetrieveArgs),
    /// Rotation and occlusion robustness of a trained run.
    Robustness(RobustnessArgs),
    /// Optimize the camera angles of test shapes under a frozen model.
    OptimizeViews(OptimizeArgs),
    /// Finite-difference checks of renderer and network gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic spec; the seven-class set when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    points: usize,
}

/// Flags that override the config file.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    view_mode: Option<ViewModeArg>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Synthetic class name, or a path to an OFF or PLY file.
    #[arg(long)]
    shape: String,
    #[arg(long, value_enum, default_value_t = ViewsArg::Circular)]
    views: ViewsArg,
    #[arg(long, default_value_t = 12)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 2048)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    radius: f64,
    #[arg(long, default_value_t = mvtn::geomcam::CIRCULAR_ELEVATION)]
    elevation: f64,
    #[arg(long, default_value_t = mvtn::geomcam::DEFAULT_DISTANCE)]
    distance: f64,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Project signatures with LFDA to this many dimensions.
    #[arg(long)]
    lfda_dim: Option<usize>,
    #[arg(long, default_value_t = mvtn::retrieval::DEFAULT_NEIGHBORS)]
    neighbors: usize,
    /// Ranked gallery items written per query.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Average precision as `Σ 1/n` over relevant ranks instead of the
    /// standard precision sum.
    #[arg(long)]
    paper_literal_ap: bool,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Maximum rotation angles in degrees.
    #[arg(long, value_delimiter = ',', default_values_t = vec![90.0, 180.0])]
    rotation: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.75])]
    occlusion: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = LossArg::Ce)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = DirectionArg::Minimize)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Step size; 50 for ce and 25 otherwise when omitted.
    #[arg(long)]
    lr: Option<f64>,
    /// Number of test shapes to optimize; all when omitted.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 10)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ViewModeArg {
    Circular,
    Spherical,
    Random,
    MvtnDirect,
    MvtnCircular,
    MvtnSpherical,
    ParamOpt,
}

impl From<ViewModeArg> for ViewMode {
    fn from(v: ViewModeArg) -> Self {
        match v {
            ViewModeArg::Circular => ViewMode::Circular,
            ViewModeArg::Spherical => ViewMode::Spherical,
            ViewModeArg::Random => ViewMode::Random,
            ViewModeArg::MvtnDirect => ViewMode::MvtnDirect,
            ViewModeArg::MvtnCircular => ViewMode::MvtnCircular,
            ViewModeArg::MvtnSpherical => ViewMode::MvtnSpherical,
            ViewModeArg::ParamOpt => ViewMode::ParamOpt,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ViewsArg {
    Circular,
    Spherical,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Ce,
    Coverage,
    Adversarial,
}

impl From<LossArg> for SceneLoss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => SceneLoss::Ce,
            LossArg::Coverage => SceneLoss::Coverage,
            LossArg::Adversarial => SceneLoss::Adversarial,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    Maximize,
    Minimize,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Maximize => Direction::Maximize,
            DirectionArg::Minimize => Direction::Minimize,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err
        .chain()
        .any(|e| e.downcast_ref::<UsageError>().is_some() || matches!(e.downcast_ref::<mvtn::Error>(), Some(mvtn::Error::Config(_))));
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => commands::render(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Robustness(a) => commands::robustness(a),
        Command::OptimizeViews(a) => commands::optimize_views(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
