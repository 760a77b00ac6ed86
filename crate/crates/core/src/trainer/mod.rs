//! Training loop, evaluation and the two ablation studies.

mod ablation;
mod config;
mod eval;
mod run;

pub use ablation::{ablate_blocks, ablate_illumination, AblationRow, BlockAblation, IlluminationAblation, TestSet};
pub use config::TrainConfig;
pub use eval::{bicubic_baseline, evaluate_checkpoint, evaluate_model, EvalOptions};
pub use run::{train, train_on_pairs, RunLog, TrainOutcome, Trainer};
