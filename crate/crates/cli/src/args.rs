use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gaitstyle", version, about = "Stylised locomotion pipeline: phases, training, rollouts and live control")]
pub struct Cli {
    /// TOML file overlaying the built-in defaults; flags and SM_ variables win over it.
    #[arg(long, global = true, env = "SM_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker thread cap for per-clip work (default: logical cores).
    #[arg(long, global = true, env = "SM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert BVH files to native clips.
    Ingest(IngestArgs),
    /// Write the left/right mirrored copy of a clip.
    Mirror(InOut),
    /// Label foot contacts and store them with the clip.
    Contacts(ContactsArgs),
    /// Extract local phases, store them with the clip and plot them.
    Phases(PhasesArgs),
    /// Assemble a manifest into training examples and report statistics.
    Dataset(DatasetArgs),
    /// Train a model and save a checkpoint with its style table.
    Train(TrainArgs),
    /// Fit a new style by updating only the style generator.
    Finetune(FinetuneArgs),
    /// Precompute style embeddings; optionally export them as CSV.
    ExportStyle(ExportStyleArgs),
    /// Offline rollout under a fixed three-style blend.
    Interp(InterpArgs),
    /// Offline rollout of a scripted control sequence.
    Rollout(RolloutArgs),
    /// Print parameter counts for a network configuration.
    CountParams(CountParamsArgs),
    /// Check analytic gradients of the composed model against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the live session endpoint.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output clip; `.bvh` writes BVH, anything else the native container.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// BVH files.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, env = "SM_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Offset and translation multiplier (0.01 for centimetre files).
    #[arg(long, env = "SM_UNIT_SCALE")]
    pub unit_scale: Option<f64>,
    /// Resampling rate.
    #[arg(long, env = "SM_FPS")]
    pub fps: Option<f64>,
    /// Style label stored in the clips.
    #[arg(long)]
    pub style: Option<String>,
}

#[derive(Debug, Args)]
pub struct ContactsArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Height threshold in metres.
    #[arg(long, env = "SM_D_MAX")]
    pub d_max: Option<f32>,
    /// Speed threshold in metres per second.
    #[arg(long, env = "SM_V_MAX")]
    pub v_max: Option<f32>,
}

#[derive(Debug, Args)]
pub struct PhasesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Annotated clip (default: next to the input as `<stem>.phases.smc`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bone to override and plot: l_hand, r_hand, l_foot or r_foot. All four are plotted when absent.
    #[arg(long)]
    pub bone: Option<String>,
    /// Phase source for `--bone`: pca or contact.
    #[arg(long)]
    pub mode: Option<String>,
    /// Directory for the SVG plots (default: next to the output clip).
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, env = "SM_MANIFEST")]
    pub manifest: PathBuf,
    /// JSON summary with per-style counts and normalisation statistics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainFlags {
    #[arg(long, env = "SM_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "SM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SM_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "SM_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, env = "SM_DROPOUT")]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "SM_MANIFEST")]
    pub manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Network size: full, desk or tiny.
    #[arg(long, env = "SM_DIMS")]
    pub dims: Option<String>,
    /// Style modulator: film, onehot or resad.
    #[arg(long, env = "SM_MODE")]
    pub mode: Option<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest with the clips of the new style.
    #[arg(long, env = "SM_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ExportStyleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Recompute embeddings for the styles of this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Updated checkpoint (default: rewrite `--checkpoint`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the style table as CSV: name, then one column per value.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Frames between averaged style windows.
    #[arg(long, env = "SM_STRIDE")]
    pub stride: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct MotionFlags {
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Heading as x,z.
    #[arg(long, value_parser = parse_pair, default_value = "0,1")]
    pub dir: [f32; 2],
    #[arg(long, default_value_t = 1.2)]
    pub speed: f32,
    /// idle, walk or run.
    #[arg(long, default_value = "walk")]
    pub gait: String,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Three style names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub styles: Vec<String>,
    /// Three barycentric weights, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub lambda: Vec<f32>,
    #[command(flatten)]
    pub motion: MotionFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON lines: {"frames": n, "dir": [x, z], "speed": s, "gait": "walk", "style": {...}}.
    /// Without a script, one segment is built from the flags below.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Style for the flag-built segment (default: the first in the checkpoint).
    #[arg(long)]
    pub style: Option<String>,
    #[command(flatten)]
    pub motion: MotionFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    /// film, onehot or resad.
    #[arg(long, default_value = "film")]
    pub mode: String,
    #[arg(long, default_value = "full")]
    pub dims: String,
    #[arg(long, default_value_t = 95)]
    pub styles: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// film, onehot, resad, or all (every mode plus each layer type on its own).
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long, env = "SM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "SM_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "SM_PORT", default_value_t = 8765)]
    pub port: u16,
    /// Starting style.
    #[arg(long)]
    pub style: Option<String>,
}

fn parse_pair(s: &str) -> Result<[f32; 2], String> {
    let v: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b] => Ok([a, b]),
        _ => Err(format!("expected two comma-separated numbers, got {s:?}")),
    }
}
