use std::fmt;
use std::str::FromStr;

use crate::error::{GtfmnError, Result};
use crate::kv::{join_list, parse_list, KeyValues};

/// What replaces the illumination guidance when the illumination stream is
/// switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuideAblation {
    /// No adapter at all: blocks see only their own attention.
    #[default]
    Drop,
    /// Keep the adapter and feed it the constant map 1.
    ConstOne,
}

impl fmt::Display for GuideAblation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuideAblation::Drop => "drop",
            GuideAblation::ConstOne => "const1",
        })
    }
}

impl FromStr for GuideAblation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "drop" | "off" => Ok(GuideAblation::Drop),
            "const1" => Ok(GuideAblation::ConstOne),
            other => Err(format!("unknown guide ablation {other:?} (expected drop|const1)")),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GtfmnConfig {
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    /// Feature channels of both streams.
    pub width: usize,
    /// Number of IGM blocks in the texture stream.
    pub depth: usize,
    /// Guards the spatial-mean division when synthesizing the map.
    pub epsilon: f64,
    pub use_illumination_stream: bool,
    pub guide_ablation: GuideAblation,
    /// Depthwise kernel sizes of the multi-scale attention.
    pub msa_kernel_sizes: Vec<usize>,
    pub ffn_expansion: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for GtfmnConfig {
    fn default() -> Self {
        Self {
            scale: 2,
            width: 32,
            depth: 4,
            epsilon: 1e-4,
            use_illumination_stream: true,
            guide_ablation: GuideAblation::Drop,
            msa_kernel_sizes: vec![3, 5, 7],
            ffn_expansion: 2,
            leaky_slope: 0.2,
            norm_eps: 1e-6,
        }
    }
}

impl GtfmnConfig {
    pub fn new(scale: usize, width: usize, depth: usize) -> Self {
        Self {
            scale,
            width,
            depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GtfmnError::Config(m));
        if !matches!(self.scale, 2 | 4) {
            return fail(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.width == 0 || self.depth == 0 {
            return fail(format!(
                "width and depth must be positive (width={}, depth={})",
                self.width, self.depth
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.msa_kernel_sizes.is_empty()
            || self.msa_kernel_sizes.iter().any(|&k| k == 0 || k % 2 == 0)
        {
            return fail(format!(
                "attention kernel sizes must be odd and non-empty, got {:?}",
                self.msa_kernel_sizes
            ));
        }
        if self.ffn_expansion == 0 {
            return fail("ffn_expansion must be positive".into());
        }
        if !(self.norm_eps >= 0.0) || !self.leaky_slope.is_finite() {
            return fail("norm_eps must be non-negative and leaky_slope finite".into());
        }
        Ok(())
    }

    /// Width of the global predictor's hidden layer.
    pub fn global_hidden(&self) -> usize {
        (self.width / 2).max(1)
    }

    pub fn has_adapter(&self) -> bool {
        self.use_illumination_stream || self.guide_ablation == GuideAblation::ConstOne
    }

    /// Smallest LR height/width the forward pass accepts.
    pub fn min_input_size(&self) -> usize {
        self.msa_kernel_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Closed-form trainable scalar count.
    ///
    /// Every convolution carries a bias. With `C` = width, `h` = max(C/2, 1),
    /// `e` = ffn expansion and `s` = scale:
    ///
    /// * illumination stream: encoder `27C + C + 2(9C² + C)`, structure
    ///   decoder `9C + 1`, global predictor `Ch + h + h + 1`
    /// * head convolution `27C + C`
    /// * per block: norm `2C`, depthwise branches `Σ(k²C + C)`, projection
    ///   `C² + C`, adapter `2C + C² + C`, feed-forward `2eC² + eC + C`
    /// * reconstruction `9C·3s² + 3s²`
    pub fn parameter_count(&self) -> usize {
        let c = self.width;
        let h = self.global_hidden();
        let e = self.ffn_expansion;
        let s2 = self.scale * self.scale;
        let illum = if self.use_illumination_stream {
            (27 * c + c) + 2 * (9 * c * c + c) + (9 * c + 1) + (c * h + h) + (h + 1)
        } else {
            0
        };
        let msa: usize = self.msa_kernel_sizes.iter().map(|k| k * k * c + c).sum();
        let adapter = if self.has_adapter() {
            (c + c) + (c * c + c)
        } else {
            0
        };
        let block = 2 * c + msa + (c * c + c) + adapter + (c * e * c + e * c) + (e * c * c + c);
        illum + (27 * c + c) + self.depth * block + (9 * c * 3 * s2 + 3 * s2)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("scale", self.scale);
        kv.set("width", self.width);
        kv.set("depth", self.depth);
        kv.set("epsilon", self.epsilon);
        kv.set("use_illumination_stream", self.use_illumination_stream);
        kv.set("guide_ablation", self.guide_ablation);
        kv.set("msa_kernel_sizes", join_list(&self.msa_kernel_sizes));
        kv.set("ffn_expansion", self.ffn_expansion);
        kv.set("leaky_slope", self.leaky_slope);
        kv.set("norm_eps", self.norm_eps);
        kv
    }

    /// Reads every architecture key; missing keys fall back to defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            scale: kv.get("scale")?.unwrap_or(d.scale),
            width: kv.get("width")?.unwrap_or(d.width),
            depth: kv.get("depth")?.unwrap_or(d.depth),
            epsilon: kv.get("epsilon")?.unwrap_or(d.epsilon),
            use_illumination_stream: kv
                .get("use_illumination_stream")?
                .unwrap_or(d.use_illumination_stream),
            guide_ablation: kv.get("guide_ablation")?.unwrap_or(d.guide_ablation),
            msa_kernel_sizes: match kv.get_str("msa_kernel_sizes") {
                Some(s) => parse_list("msa_kernel_sizes", s)?,
                None => d.msa_kernel_sizes,
            },
            ffn_expansion: kv.get("ffn_expansion")?.unwrap_or(d.ffn_expansion),
            leaky_slope: kv.get("leaky_slope")?.unwrap_or(d.leaky_slope),
            norm_eps: kv.get("norm_eps")?.unwrap_or(d.norm_eps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
