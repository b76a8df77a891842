use cadenet_core::pipeline::Ablation;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "cadenet",
    version,
    about = "Adverse-weather perception: enhancement, fusion, tracking and benchmarking",
    arg_required_else_help = true,
    after_help = crate::config::defaults_help()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance one image with the condition-adaptive filters
    Enhance(EnhanceArgs),
    /// Estimate weather condition and severity for an image
    Wem(ImageArgs),
    /// Print the patch reliability grid of an image
    Pee(PeeArgs),
    /// Inspect a scene-embedding database
    #[command(subcommand)]
    Sed(SedCommand),
    /// Run the three-worker pipeline over a frame source
    Pipeline(PipelineArgs),
    /// Compare detection on original vs enhanced images against ground truth
    Benchmark(BenchmarkArgs),
    /// Run the benchmark and a simulated pipeline under each ablation
    Ablate(AblateArgs),
    /// Time one operation with warmup and timed repetitions
    Latency(LatencyArgs),
    /// Write a seeded synthetic corpus (PNG + VOC XML + manifest)
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Filter parameter file (JSON); absent keys keep their defaults
    #[arg(long, env = "CADENET_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    /// Input image (PNG or binary PPM)
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Rain,
    Fog,
    Sand,
    Snow,
    Clear,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Input image (PNG or binary PPM)
    pub input: PathBuf,
    /// Output image; the extension picks the format
    pub output: PathBuf,
    /// Force the enhancement branch instead of estimating it
    #[arg(long, value_enum)]
    pub condition: Option<ConditionArg>,
    /// Force the severity in [0, 1] instead of estimating it
    #[arg(long)]
    pub severity: Option<f64>,
    /// Send fog frames darker than this mean luma to CLAHE instead of DCP
    #[arg(long, value_name = "LUMA")]
    pub night_gate: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct PeeArgs {
    /// Input image (PNG or binary PPM)
    pub input: PathBuf,
    /// Also write the reliability map as a gray image
    #[arg(long, value_name = "PATH")]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SedCommand {
    /// Print every entry of a database file
    Dump {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    /// Gradient-component proposals; needs no annotations
    Contrast,
    /// Annotated boxes scored by local contrast; needs ground truth
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    /// Deterministic discrete-event clock using the stage cost model
    Sim,
    /// Wall clock with real worker threads
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoutingArg {
    #[value(name = "gt_label")]
    GtLabel,
    Wem,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Corpus directory, or `synthetic` for a generated video
    #[arg(long, default_value = "synthetic")]
    pub source: String,
    /// Camera frame rate
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Ablation to apply (A1..A7); repeat or comma-separate for several
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<Ablation>,
    /// Track log output (`frame,id,class,x1,y1,x2,y2,conf`); stdout if absent
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sim")]
    pub clock: ClockArg,
    #[arg(long, value_enum, default_value = "contrast")]
    pub detector: DetectorArg,
    /// Extra time added to every quality-worker cycle
    #[arg(long, default_value_t = 0.0, value_name = "MS")]
    pub quality_delay_ms: f64,
    /// Scene-embedding database file, created if missing
    #[arg(long, value_name = "PATH")]
    pub sed: Option<PathBuf>,
    /// Embedding dimension
    #[arg(long, default_value_t = 2048)]
    pub dim: usize,
    /// Zero-shot prompt file, one `label: text` per line
    #[arg(long, value_name = "PATH")]
    pub prompts: Option<PathBuf>,
    /// Detection confidence threshold
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    /// NMS IoU threshold for stream fusion
    #[arg(long, default_value_t = 0.45)]
    pub nms_iou: f64,
    /// Minimum IoU for a detection to join a track
    #[arg(long, default_value_t = 0.3)]
    pub gate: f64,
    /// Top-2 spread below which the zero-shot label overrides the heuristic
    #[arg(long, default_value_t = 0.15)]
    pub spread: f64,
    /// Synthetic source: number of frames
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    /// Synthetic source: weather condition
    #[arg(long, value_enum, default_value = "fog")]
    pub condition: ConditionArg,
    /// Synthetic source: severity in [0, 1]
    #[arg(long, default_value_t = 0.6)]
    pub severity: f64,
    /// Synthetic source: frame width
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    /// Synthetic source: frame height
    #[arg(long, default_value_t = 120)]
    pub height: usize,
    /// Seed for every random choice (scene, embedder projection)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Directory of images, VOC XML annotations and manifest.txt
    #[arg(long)]
    pub corpus: PathBuf,
    /// How each image picks its enhancement branch
    #[arg(long, value_enum, default_value = "gt_label")]
    pub routing: RoutingArg,
    /// Output directory for records.jsonl and summary.txt
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "contrast")]
    pub detector: DetectorArg,
    /// Detection confidence threshold
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    /// IoU needed for a true positive
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Apply an enhancement-side ablation (A3 or A4)
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory of images, VOC XML annotations and manifest.txt
    #[arg(long)]
    pub corpus: PathBuf,
    /// Ablations to run, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "A1,A2,A3,A4,A5,A6,A7")]
    pub ids: Vec<Ablation>,
    #[arg(long, value_enum, default_value = "contrast")]
    pub detector: DetectorArg,
    /// Camera frame rate for the simulated pipeline runs
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Embedding dimension
    #[arg(long, default_value_t = 2048)]
    pub dim: usize,
    /// Seed for the embedder projection
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the table here as well as to stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OpArg {
    Egnms,
    Nms,
    Hungarian,
    Pee,
    Wem,
    Dcp,
    Derain,
    Clahe,
    Ktt,
    Detect,
    Embed,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    /// Operation to time
    #[arg(long, value_enum)]
    pub op: OpArg,
    /// CPU discipline: 5 warmup + 100 timed calls instead of 10 + 50
    #[arg(long)]
    pub cpu: bool,
    /// Input frame width
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    /// Input frame height
    #[arg(long, default_value_t = 480)]
    pub height: usize,
    /// Seed for the generated input
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Conditions to cycle through, comma-separated
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fog")]
    pub conditions: Vec<ConditionArg>,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = 120)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
