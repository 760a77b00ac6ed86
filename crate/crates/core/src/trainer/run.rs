use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gtfmn_tensor::{Element, Tape};

use super::config::TrainConfig;
use super::eval::{evaluate_model, EvalOptions};
use crate::checkpoint::save_checkpoint;
use crate::data::{load_pairs, read_manifest, PairedSample, PatchSampler};
use crate::error::{io_err, GtfmnError, Result};
use crate::metrics::MetricSummary;
use crate::model::GtfmnModel;
use crate::optim::{l1_loss, map_smoothness, Adam};

const SAMPLER_SALT: u64 = 0x5EED_0F_5A4D_1E5;

/// What a training run leaves behind.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    /// `(step, loss)` for every step, 1-based.
    pub losses: Vec<(usize, f64)>,
    pub evals: Vec<(usize, MetricSummary)>,
    /// `(step, seconds since start)` at every log point.
    pub wall_clock: Vec<(usize, f64)>,
    pub final_checkpoint: Option<PathBuf>,
}

impl RunLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|&(_, l)| l)
    }

    /// Means of consecutive non-overlapping windows.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|&(_, l)| l).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

pub struct TrainOutcome {
    pub model: GtfmnModel<f32>,
    pub log: RunLog,
}

/// One training run: owns the model, the optimizer and the sampler.
pub struct Trainer {
    config: TrainConfig,
    model: GtfmnModel<f32>,
    adam: Adam,
    sampler: PatchSampler<f32>,
    step: usize,
    log: RunLog,
    run_dir: Option<PathBuf>,
    loss_csv: Option<BufWriter<File>>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig, pairs: Vec<PairedSample<f32>>, run_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let model = GtfmnModel::new(config.model.clone(), config.seed)?;
        Self::with_model(config, model, pairs, run_dir)
    }

    /// Starts from an existing model, e.g. one restored from a checkpoint.
    pub fn with_model(
        config: TrainConfig,
        model: GtfmnModel<f32>,
        pairs: Vec<PairedSample<f32>>,
        run_dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model {
            return Err(GtfmnError::Config("model does not match the training config".into()));
        }
        let sampler = PatchSampler::new(
            pairs,
            config.lr_patch,
            config.batch,
            config.model.scale,
            config.augment,
            config.seed ^ SAMPLER_SALT,
        )?;
        let adam = Adam::new(config.adam())?;
        let mut loss_csv = None;
        if let Some(dir) = run_dir {
            fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
            let cfg_path = dir.join("config.txt");
            fs::write(&cfg_path, config.to_key_values().to_text())
                .map_err(io_err(format!("writing {}", cfg_path.display())))?;
            let path = dir.join("loss.csv");
            let mut f = BufWriter::new(
                File::create(&path).map_err(io_err(format!("creating {}", path.display())))?,
            );
            writeln!(f, "step,loss").map_err(io_err("writing loss.csv"))?;
            loss_csv = Some(f);
        }
        Ok(Self {
            config,
            model,
            adam,
            sampler,
            step: 0,
            log: RunLog::default(),
            run_dir: run_dir.map(Path::to_path_buf),
            loss_csv,
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &GtfmnModel<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut GtfmnModel<f32> {
        &mut self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    fn abort_non_finite(&mut self) -> GtfmnError {
        let step = self.step + 1;
        let checkpoint = self.run_dir.as_ref().and_then(|dir| {
            let path = dir.join("ckpt_lastgood.bin");
            match save_checkpoint(&path, &self.model, self.step) {
                Ok(()) => Some(path),
                Err(e) => {
                    log::error!("could not save last-good checkpoint: {e}");
                    None
                }
            }
        });
        if let Some(f) = &mut self.loss_csv {
            let _ = f.flush();
        }
        GtfmnError::NonFiniteLoss { step, checkpoint }
    }

    /// Samples a batch, back-propagates the loss and applies one Adam
    /// update. Parameters are left untouched when the loss or any gradient
    /// is non-finite.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.sampler.next_batch()?;
        let tape = Tape::new();
        let p = self.model.bind(&tape);
        let x = tape.constant(batch.lr);
        let y = tape.constant(batch.hr);
        let out = self.model.forward(&p, &x)?;
        let mut loss = l1_loss(&out.sr, &y)?;
        if self.config.smoothness_weight > 0.0 && out.spatial_map.is_some() {
            let smooth = map_smoothness(&out.map)?.scale(self.config.smoothness_weight as f32);
            loss = loss.add(&smooth)?;
        }
        let value = loss.value().data()[0].as_f64();
        if !value.is_finite() {
            return Err(self.abort_non_finite());
        }
        let mut grads = tape.backward(&loss)?;
        p.write_grads(&mut grads, self.model.params_mut())?;
        match self.adam.step(self.model.params_mut().tensors_mut()) {
            Ok(()) => {}
            Err(GtfmnError::Optimizer(msg)) => {
                log::error!("step {}: {msg}", self.step + 1);
                return Err(self.abort_non_finite());
            }
            Err(e) => return Err(e),
        }
        self.model.params_mut().zero_grads();

        self.step += 1;
        self.log.losses.push((self.step, value));
        if let Some(f) = &mut self.loss_csv {
            writeln!(f, "{},{value}", self.step).map_err(io_err("writing loss.csv"))?;
        }
        if self.step % self.config.log_every == 0 {
            let secs = self.started.elapsed().as_secs_f64();
            self.log.wall_clock.push((self.step, secs));
            log::info!("step {:>6}  loss {value:.6}  {secs:.1}s", self.step);
        }
        Ok(value)
    }

    fn checkpoint(&mut self, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.run_dir else {
            return Ok(None);
        };
        let path = dir.join(name);
        save_checkpoint(&path, &self.model, self.step)?;
        Ok(Some(path))
    }

    fn evaluate(&mut self, eval: &[PairedSample<f32>]) -> Result<()> {
        if eval.is_empty() {
            return Ok(());
        }
        let opts = EvalOptions {
            border_crop: self.config.border(),
            luma: self.config.luma,
            parallel: !self.config.deterministic,
        };
        let summary = evaluate_model(&self.model, eval, opts, &format!("step {}", self.step))?;
        log::info!(
            "eval step {}: psnr {} ssim {:.4}",
            self.step,
            crate::metrics::format_db(summary.mean.psnr),
            summary.mean.ssim
        );
        if let Some(dir) = &self.run_dir {
            let stem = dir.join(format!("eval_{:06}", self.step));
            fs::write(stem.with_extension("csv"), summary.to_csv())
                .map_err(io_err("writing eval csv"))?;
            fs::write(stem.with_extension("json"), summary.to_json())
                .map_err(io_err("writing eval json"))?;
        }
        self.log.evals.push((self.step, summary));
        Ok(())
    }

    /// Runs to `config.steps` (or the target loss), with periodic
    /// checkpoints and evaluations, and a final checkpoint and evaluation.
    pub fn run(mut self, eval: &[PairedSample<f32>]) -> Result<TrainOutcome> {
        while self.step < self.config.steps {
            let loss = self.step()?;
            let (step, total) = (self.step, self.config.steps);
            let every = |n: usize| n > 0 && step % n == 0 && step < total;
            if every(self.config.checkpoint_every) {
                self.checkpoint(&format!("ckpt_{:06}.bin", self.step))?;
            }
            if every(self.config.eval_every) {
                self.evaluate(eval)?;
            }
            if self.config.target_loss.is_some_and(|t| loss < t) {
                log::info!("target loss reached at step {}", self.step);
                break;
            }
        }
        if let Some(f) = &mut self.loss_csv {
            f.flush().map_err(io_err("writing loss.csv"))?;
        }
        self.log.final_checkpoint = self.checkpoint("ckpt_final.bin")?;
        self.evaluate(eval)?;
        Ok(TrainOutcome {
            model: self.model,
            log: self.log,
        })
    }
}

/// Trains on in-memory pairs.
pub fn train_on_pairs(
    config: &TrainConfig,
    train: Vec<PairedSample<f32>>,
    eval: &[PairedSample<f32>],
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    Trainer::new(config.clone(), train, run_dir)?.run(eval)
}

/// Trains on a corpus manifest, optionally evaluating on a second one.
pub fn train(
    config: &TrainConfig,
    train_manifest: &Path,
    eval_manifest: Option<&Path>,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    let scale = config.model.scale;
    let train_pairs = load_pairs(&read_manifest(train_manifest)?, scale)?;
    let eval_pairs = match eval_manifest {
        Some(m) => load_pairs(&read_manifest(m)?, scale)?,
        None => Vec::new(),
    };
    train_on_pairs(config, train_pairs, &eval_pairs, Some(run_dir))
}
