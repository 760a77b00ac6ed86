use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gtfmn_core::data::{GammaSpec, LumaRange};
use gtfmn_core::kv::KeyValues;
use gtfmn_core::trainer::TrainConfig;
use gtfmn_core::{GtfmnError, GuideAblation, Result};

#[derive(Debug, Parser)]
#[command(name = "gtfmn", version, about = "Illumination-guided low-light super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a paired HR/LR corpus by gamma darkening and bicubic downsampling.
    SynthData(SynthArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Super-resolve images with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on a test manifest (PSNR, MSE, SSIM on luma).
    Eval(EvalArgs),
    /// Train one model per block count and tabulate the results.
    AblateBlocks(AblateBlocksArgs),
    /// Train matched models with and without the illumination stream.
    AblateIllum(AblateIllumArgs),
    /// Run the embedded oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of HR images. When omitted, procedural test charts are
    /// generated into OUT_DIR/source and used instead.
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    /// Output directory for hr/, lr/ and manifest.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Upscaling factor (2 or 4).
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Darkening exponent, fixed (`2.2`) or a per-image range (`1.8:2.6`).
    #[arg(long, default_value = "2.2")]
    pub gamma: GammaSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of procedural charts to generate when --hr-dir is absent.
    #[arg(long, default_value_t = 10)]
    pub charts: usize,
    /// Side length of generated charts, in HR pixels.
    #[arg(long, default_value_t = 96)]
    pub chart_size: usize,
}

/// Training hyperparameters. Every flag overrides the matching key of
/// --config, which in turn overrides the built-in default.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// `key = value` file with any of the keys below (flag names with
    /// underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Upscaling factor, 2 or 4 [default: 2]
    #[arg(long)]
    pub scale: Option<usize>,
    /// Feature channels [default: 32]
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of IGM blocks [default: 4]
    #[arg(long)]
    pub depth: Option<usize>,
    /// Guard constant of the illumination map normalization [default: 0.0001]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Use the illumination stream [default: true]
    #[arg(long)]
    pub use_illumination_stream: Option<bool>,
    /// Guidance replacement when the stream is off: drop | const1 [default: drop]
    #[arg(long)]
    pub guide_ablation: Option<GuideAblation>,
    /// Depthwise attention kernel sizes, comma separated [default: 3,5,7]
    #[arg(long)]
    pub msa_kernel_sizes: Option<String>,
    /// Feed-forward expansion factor [default: 2]
    #[arg(long)]
    pub ffn_expansion: Option<usize>,
    /// Darkening exponent recorded with the run [default: 2.2]
    #[arg(long)]
    pub gamma: Option<GammaSpec>,
    /// LR patch side [default: 32]
    #[arg(long)]
    pub lr_patch: Option<usize>,
    /// Patches per step [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Optimizer steps [default: 20000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed for weights and patch sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 0.0002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Steps after which the learning rate halves, comma separated [default: none]
    #[arg(long)]
    pub lr_milestones: Option<String>,
    /// Checkpoint cadence in steps, 0 for final only [default: 5000]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Evaluation cadence in steps, 0 for final only [default: 0]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Logging cadence in steps [default: 100]
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Random flips and rotations of patches [default: true]
    #[arg(long)]
    pub augment: Option<bool>,
    /// Sequential evaluation [default: true]
    #[arg(long)]
    pub deterministic: Option<bool>,
    /// Weight of the illumination map smoothness term [default: 0]
    #[arg(long)]
    pub smoothness_weight: Option<f64>,
    /// Pixels cropped per side before metrics [default: the scale]
    #[arg(long)]
    pub border_crop: Option<usize>,
    /// Luma convention for metrics: full | studio [default: full]
    #[arg(long)]
    pub luma: Option<LumaRange>,
    /// Stop once the step loss falls below this value [default: none]
    #[arg(long)]
    pub target_loss: Option<f64>,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut kv = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| GtfmnError::Io {
                    context: format!("reading {}", path.display()),
                    source,
                })?;
                KeyValues::parse(&text)?
            }
            None => KeyValues::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    kv.set(stringify!($field), v);
                })*
            };
        }
        overlay!(
            scale,
            width,
            depth,
            epsilon,
            use_illumination_stream,
            guide_ablation,
            msa_kernel_sizes,
            ffn_expansion,
            gamma,
            lr_patch,
            batch,
            steps,
            seed,
            lr,
            lr_milestones,
            checkpoint_every,
            eval_every,
            log_every,
            augment,
            deterministic,
            smoothness_weight,
            border_crop,
            luma,
            target_loss
        );
        TrainConfig::from_key_values(&kv)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Optional held-out manifest evaluated during and after training.
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// Run directory for config.txt, loss.csv, eval_*.csv and ckpt_*.bin.
    #[arg(long, env = "GTFMN_RUN_DIR")]
    pub run_dir: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the illumination map as an 8-bit grayscale PNG.
    #[arg(long)]
    pub emit_map: bool,
    /// Also write a [bicubic | model] comparison image.
    #[arg(long)]
    pub side_by_side: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pixels cropped per side [default: the checkpoint's scale]
    #[arg(long)]
    pub border_crop: Option<usize>,
    #[arg(long, default_value = "full")]
    pub luma: LumaRange,
    /// Also score plain bicubic upscaling.
    #[arg(long)]
    pub baseline: bool,
    /// Write report.txt, report.csv and report.json here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationData {
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Test manifests; repeat for several sets. Each set is named after
    /// the manifest's directory.
    #[arg(long = "test-manifest", required = true)]
    pub test_manifests: Vec<PathBuf>,
    #[arg(long, env = "GTFMN_RUN_DIR")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateBlocksArgs {
    #[command(flatten)]
    pub data: AblationData,
    /// Block counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub depths: Vec<usize>,
    /// Sweep the full-scale block counts 16, 32 and 64 instead.
    #[arg(long, conflicts_with = "depths")]
    pub full_depths: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct AblateIllumArgs {
    #[command(flatten)]
    pub data: AblationData,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Guard constant used by the illumination map checks.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Skip the full-model finite-difference check.
    #[arg(long)]
    pub quick: bool,
}
