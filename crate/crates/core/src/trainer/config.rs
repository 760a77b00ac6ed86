use std::fmt;

use crate::config::GtfmnConfig;
use crate::data::{DegradationSpec, GammaSpec, LumaRange};
use crate::error::{GtfmnError, Result};
use crate::kv::{join_list, parse_list, KeyValues};
use crate::optim::AdamConfig;

/// Everything one training run needs. Serialized as `config.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: GtfmnConfig,
    pub gamma: GammaSpec,
    /// LR patch side.
    pub lr_patch: usize,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    /// 0 disables periodic checkpoints; a final one is always written.
    pub checkpoint_every: usize,
    /// 0 evaluates only at the end.
    pub eval_every: usize,
    pub log_every: usize,
    pub augment: bool,
    /// Sequential evaluation and data loading. Training itself is always
    /// single-threaded and reproducible.
    pub deterministic: bool,
    /// Weight of the map smoothness term; 0 trains on image L1 alone.
    pub smoothness_weight: f64,
    /// Pixels cropped per side before metrics; defaults to the scale.
    pub border_crop: Option<usize>,
    pub luma: LumaRange,
    /// Stops early once the step loss falls below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: GtfmnConfig::default(),
            gamma: GammaSpec::default(),
            lr_patch: 32,
            batch: 8,
            steps: 20_000,
            seed: 0,
            lr: 2e-4,
            lr_milestones: Vec::new(),
            checkpoint_every: 5_000,
            eval_every: 0,
            log_every: 100,
            augment: true,
            deterministic: true,
            smoothness_weight: 0.0,
            border_crop: None,
            luma: LumaRange::Full,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> DegradationSpec {
        DegradationSpec::new(self.gamma, self.model.scale)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            milestones: self.lr_milestones.clone(),
            ..AdamConfig::default()
        }
    }

    pub fn border(&self) -> usize {
        self.border_crop.unwrap_or(self.model.scale)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.spec().validate()?;
        self.adam().validate()?;
        if self.lr_patch == 0 || self.batch == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(GtfmnError::Config(
                "lr_patch, batch, steps and log_every must be positive".into(),
            ));
        }
        if self.lr_patch < self.model.min_input_size() {
            return Err(GtfmnError::Config(format!(
                "lr_patch {} is below the minimum input size {}",
                self.lr_patch,
                self.model.min_input_size()
            )));
        }
        if !(self.smoothness_weight >= 0.0 && self.smoothness_weight.is_finite()) {
            return Err(GtfmnError::Config("smoothness_weight must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.model.to_key_values();
        kv.set("gamma", self.gamma);
        kv.set("lr_patch", self.lr_patch);
        kv.set("batch", self.batch);
        kv.set("steps", self.steps);
        kv.set("seed", self.seed);
        kv.set("lr", self.lr);
        kv.set("lr_milestones", join_list(&self.lr_milestones));
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("eval_every", self.eval_every);
        kv.set("log_every", self.log_every);
        kv.set("augment", self.augment);
        kv.set("deterministic", self.deterministic);
        kv.set("smoothness_weight", self.smoothness_weight);
        kv.set("border_crop", opt(self.border_crop));
        kv.set("luma", self.luma);
        kv.set("target_loss", opt(self.target_loss));
        kv
    }

    /// Every key is optional; unknown keys are rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let known = d.to_key_values();
        if let Some(k) = kv.keys().find(|k| known.get_str(k).is_none()) {
            return Err(GtfmnError::Config(format!("unknown configuration key `{k}`")));
        }
        let cfg = Self {
            model: GtfmnConfig::from_key_values(kv)?,
            gamma: kv.get("gamma")?.unwrap_or(d.gamma),
            lr_patch: kv.get("lr_patch")?.unwrap_or(d.lr_patch),
            batch: kv.get("batch")?.unwrap_or(d.batch),
            steps: kv.get("steps")?.unwrap_or(d.steps),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            lr: kv.get("lr")?.unwrap_or(d.lr),
            lr_milestones: match kv.get_str("lr_milestones") {
                Some(s) => parse_list("lr_milestones", s)?,
                None => d.lr_milestones,
            },
            checkpoint_every: kv.get("checkpoint_every")?.unwrap_or(d.checkpoint_every),
            eval_every: kv.get("eval_every")?.unwrap_or(d.eval_every),
            log_every: kv.get("log_every")?.unwrap_or(d.log_every),
            augment: kv.get("augment")?.unwrap_or(d.augment),
            deterministic: kv.get("deterministic")?.unwrap_or(d.deterministic),
            smoothness_weight: kv.get("smoothness_weight")?.unwrap_or(d.smoothness_weight),
            border_crop: get_opt(kv, "border_crop")?,
            luma: kv.get("luma")?.unwrap_or(d.luma),
            target_loss: get_opt(kv, "target_loss")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

fn get_opt<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match kv.get_str(key) {
        None | Some("none") => Ok(None),
        Some(_) => kv.get(key),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let cfg = TrainConfig {
            gamma: GammaSpec::Uniform { lo: 1.8, hi: 2.6 },
            lr_milestones: vec![100, 200],
            border_crop: Some(0),
            target_loss: Some(0.01),
            luma: LumaRange::Studio,
            ..TrainConfig::default()
        };
        let text = cfg.to_key_values().to_text();
        let back = TrainConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let kv = KeyValues::parse("widht = 8").unwrap();
        assert!(TrainConfig::from_key_values(&kv).is_err());
    }

    #[test]
    fn rejects_bad_counts() {
        let mut cfg = TrainConfig { batch: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.batch = 1;
        cfg.lr_patch = 4;
        assert!(cfg.validate().is_err());
    }
}
