use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "gsflow",
    version,
    about = "Dynamic Gaussian flow, object discovery and vector-controlled Gaussian splatting",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run every loop sequentially.
    #[arg(long, global = true)]
    pub serial: bool,
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Render a preset into a run directory: scene, frames, oracle flows and poses.
    Simulate(SimulateArgs),
    /// Render a scene from one camera.
    Render(RenderArgs),
    /// Decompose an observed flow field into camera, Gaussian and residual parts.
    Flow(FlowArgs),
    /// Find dynamic Gaussians, cluster them and extract trajectories.
    Discover(DiscoverArgs),
    /// Train the deformable and/or controllable stage.
    Train(TrainArgs),
    /// Render a trained model with clusters moved by control vectors.
    Control(ControlArgs),
    /// Serve the live control endpoint and viewer assets.
    Serve(ServeArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    Static,
    OneObject,
    TwoObjects,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the preset's frame count.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CameraArgs {
    /// Camera JSON file with `intrinsics` and `pose`.
    #[arg(long, conflicts_with = "poses")]
    pub camera: Option<PathBuf>,
    /// poses.json of a run directory; the camera of `--frame` is used.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "poses")]
    pub frame: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Scene as JSON or binary splat PLY.
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Time at which scripted motion is sampled (default: the frame's time, or 0).
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the expected depth as PFM.
    #[arg(long)]
    pub depth_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SignArg {
    #[value(name = "+")]
    #[serde(rename = "+")]
    Plus,
    #[value(name = "-")]
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Args, Serialize)]
pub struct FlowArgs {
    /// Observed flow from frame f to f + 1 (.flo, pixel displacement).
    #[arg(long)]
    pub u: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    /// Interval length in seconds (default: from the frame times).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Dynamic threshold in pixels.
    #[arg(long, default_value_t = gsflow::flow::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, value_enum, default_value = "+", allow_hyphen_values = true)]
    pub flow_sign: SignArg,
    /// Prefix of the output files (default: next to `--u`).
    #[arg(long)]
    pub out_prefix: Option<String>,
    /// Scene providing depth and contributions (default: scene.json beside poses.json).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Frame index f (default: the number in the flow file name).
    #[arg(long)]
    pub frame: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiscoverArgs {
    /// Scene whose Gaussians are scored (default: scene.json in the run directory).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Run directory with poses.json, frames/ and flows/.
    #[arg(long)]
    pub frames: PathBuf,
    /// Stage-one checkpoint; its per-frame states replace the scene's motion.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = gsflow::flow::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = gsflow::discovery::DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, default_value_t = gsflow::discovery::DEFAULT_MIN_WEIGHT)]
    pub min_weight: f64,
    #[arg(long, default_value_t = gsflow::discovery::DEFAULT_MIN_SAMPLES)]
    pub min_samples: usize,
    /// Default: max(10, ceil(0.004 · dynamic count)).
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long, default_value_t = gsflow::discovery::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value = "clusters.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageArg {
    Deformable,
    Controllable,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Initial Gaussians (JSON or PLY); scripted motion is sampled at the first frame.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Run directory with poses.json, frames/ and flows/.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub stage: StageArg,
    #[arg(long, default_value_t = gsflow::train::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = gsflow::train::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = gsflow::train::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = gsflow::train::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Stage-one checkpoint to start the controllable stage from.
    #[arg(long)]
    pub checkpoint_in: Option<PathBuf>,
    /// clusters.json for the controllable stage.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Where `--stage both` writes the discovered clusters (default: clusters.json beside the checkpoint).
    #[arg(long)]
    pub clusters_out: Option<PathBuf>,
    /// Keep Gaussians fixed in the controllable stage.
    #[arg(long)]
    pub freeze_gaussians: bool,
    /// One network for all clusters.
    #[arg(long)]
    pub shared: bool,
    /// Add seeded noise to the initial Gaussians.
    #[arg(long)]
    pub perturb: bool,
    /// Dynamic threshold for discovery in `--stage both`.
    #[arg(long, default_value_t = gsflow::flow::DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ControlArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Replace the checkpoint's trajectories with those of clusters.json.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// `k:x,y,z`, repeatable.
    #[arg(long = "command", value_name = "K:X,Y,Z", allow_hyphen_values = true)]
    pub commands: Vec<String>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Initial camera; without one the default orbit is used.
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Directory of viewer assets served over HTTP.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentArg {
    Quadratic,
    Deformable,
    Controllable,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub component: ComponentArg,
    #[arg(long, default_value_t = gsflow::train::DEFAULT_GRADCHECK_STEP)]
    pub h: f64,
    /// Exit with a data error when any block exceeds this relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
