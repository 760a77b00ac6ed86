//! The dual-stream network: `(I_SR, M) = G(I_LR)`.
//!
//! The illumination stream estimates a map `M ∈ [0,1]^{H×W}`; the texture
//! stream lifts the input to `C` channels, refines it through `N` IGM blocks
//! guided by `M`, and reconstructs the `s×` image with a convolution and a
//! pixel shuffle.

mod igm;
mod illumination;
mod layers;
mod params;

use std::sync::atomic::{AtomicUsize, Ordering};

use gtfmn_tensor::{Element, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use igm::BlockTrace;
pub use illumination::synthesize_illumination_map;
pub use params::{BoundParams, ParamId, ParamStore};

use igm::IgmBlock;
use illumination::IlluminationStream;
use layers::Conv;

use crate::config::GtfmnConfig;
use crate::error::{GtfmnError, Result};

// Independent RNG streams per component, so that toggling one component
// leaves the initial weights of the others unchanged.
const STREAM_ILLUMINATION: u64 = 1;
const STREAM_HEAD: u64 = 2;
const STREAM_RECON: u64 = 3;
const STREAM_BLOCKS: u64 = 100;

/// Illumination map of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap<T: Element> {
    /// N×1×H×W, every value in [0, 1].
    pub values: Tensor<T>,
    /// Per-sample global brightness `g`.
    pub global_intensity: Vec<T>,
}

/// Tape outputs of a full forward pass.
pub struct ForwardOutput<'t, T: Element> {
    /// N×3×sH×sW.
    pub sr: Var<'t, T>,
    /// N×1×H×W guidance map; the constant 1 when the stream is disabled.
    pub map: Var<'t, T>,
    pub spatial_map: Option<Var<'t, T>>,
    /// N×1×1×1.
    pub global_intensity: Option<Var<'t, T>>,
}

impl<T: Element> ForwardOutput<'_, T> {
    pub fn illumination_map(&self) -> IlluminationMap<T> {
        let n = self.map.shape()[0];
        IlluminationMap {
            values: self.map.to_tensor(),
            global_intensity: match &self.global_intensity {
                Some(g) => g.value().data().to_vec(),
                None => vec![T::one(); n],
            },
        }
    }
}

pub struct GtfmnModel<T: Element> {
    config: GtfmnConfig,
    params: ParamStore<T>,
    illumination: Option<IlluminationStream>,
    head: Conv,
    blocks: Vec<IgmBlock>,
    recon: Conv,
    guide_reads: AtomicUsize,
}

impl<T: Element> Clone for GtfmnModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            illumination: self.illumination.clone(),
            head: self.head.clone(),
            blocks: self.blocks.clone(),
            recon: self.recon.clone(),
            guide_reads: AtomicUsize::new(self.guide_reads.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Element> std::fmt::Debug for GtfmnModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GtfmnModel")
            .field("config", &self.config)
            .field("parameters", &self.params.scalar_count())
            .finish()
    }
}

impl<T: Element> GtfmnModel<T> {
    /// Randomly initialized model; weights are a pure function of
    /// `(config, seed)`.
    pub fn new(config: GtfmnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng_for = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        let mut params = ParamStore::new();
        let illumination = config.use_illumination_stream.then(|| {
            IlluminationStream::new(&mut params, &config, &mut rng_for(STREAM_ILLUMINATION))
        });
        let head = Conv::new(
            &mut params,
            "texture.head",
            3,
            config.width,
            3,
            1,
            &mut rng_for(STREAM_HEAD),
        );
        let blocks = (0..config.depth)
            .map(|i| {
                IgmBlock::new(
                    &mut params,
                    &config,
                    i,
                    &mut rng_for(STREAM_BLOCKS + i as u64),
                )
            })
            .collect();
        let out_channels = 3 * config.scale * config.scale;
        let recon = Conv::new(
            &mut params,
            "texture.recon",
            config.width,
            out_channels,
            3,
            1,
            &mut rng_for(STREAM_RECON),
        );
        Ok(Self {
            config,
            params,
            illumination,
            head,
            blocks,
            recon,
            guide_reads: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GtfmnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Exact trainable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    /// How many times an IGM block has consumed a guidance map since
    /// construction or the last [`reset_guide_reads`](Self::reset_guide_reads).
    pub fn guide_reads(&self) -> usize {
        self.guide_reads.load(Ordering::Relaxed)
    }

    pub fn reset_guide_reads(&self) {
        self.guide_reads.store(0, Ordering::Relaxed);
    }

    /// Zeroes every IGM block parameter, norm scales included, which turns
    /// each block into the identity.
    pub fn zero_blocks(&mut self) {
        self.params.zero_prefix("blocks.");
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        self.params.bind(tape)
    }

    fn stream(&self) -> Result<&IlluminationStream> {
        self.illumination
            .as_ref()
            .ok_or_else(|| GtfmnError::Config("illumination stream is disabled".into()))
    }

    pub fn illumination_encode<'t>(
        &self,
        p: &BoundParams<'t, T>,
        input: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.stream()?.encode(p, input)
    }

    pub fn predict_spatial_map<'t>(
        &self,
        p: &BoundParams<'t, T>,
        features: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.stream()?.spatial_map(p, features)
    }

    pub fn predict_global_intensity<'t>(
        &self,
        p: &BoundParams<'t, T>,
        features: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.stream()?.global_intensity(p, features)
    }

    /// Runs block `index` on `features`. Blocks without an adapter never look
    /// at `guide`; blocks with one require it.
    pub fn igm_block<'t>(
        &self,
        index: usize,
        p: &BoundParams<'t, T>,
        features: &Var<'t, T>,
        guide: Option<&Var<'t, T>>,
    ) -> Result<BlockTrace<'t, T>> {
        let block = self.blocks.get(index).ok_or_else(|| {
            GtfmnError::Input(format!("block {index} out of range ({})", self.blocks.len()))
        })?;
        let guide = if block.has_adapter() { guide } else { None };
        if guide.is_some() {
            self.guide_reads.fetch_add(1, Ordering::Relaxed);
        }
        block.forward(p, features, guide)
    }

    /// Head convolution of the texture stream: N×3×H×W → N×C×H×W.
    pub fn texture_head<'t>(
        &self,
        p: &BoundParams<'t, T>,
        input: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.head.forward(p, input)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = input
            .dims4("forward")
            .map_err(|e| GtfmnError::Input(e.to_string()))?;
        if c != 3 {
            return Err(GtfmnError::Input(format!(
                "expected 3 input channels, got {c}"
            )));
        }
        let min = self.config.min_input_size();
        if h < min || w < min {
            return Err(GtfmnError::Input(format!(
                "input {h}×{w} is too small; height and width must be at least {min}"
            )));
        }
        Ok(())
    }

    /// Full forward pass on a tape.
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t, T>,
        input: &Var<'t, T>,
    ) -> Result<ForwardOutput<'t, T>> {
        self.check_input(input.value())?;
        let tape = input.tape();
        let (n, _, h, w) = input.value().dims4("forward")?;

        let (map, spatial_map, global_intensity) = match &self.illumination {
            Some(stream) => {
                let features = stream.encode(p, input)?;
                let spatial = stream.spatial_map(p, &features)?;
                let g = stream.global_intensity(p, &features)?;
                let eps = T::from_f64_lossy(self.config.epsilon);
                let map = synthesize_illumination_map(&spatial, &g, eps)?;
                (map, Some(spatial), Some(g))
            }
            None => (tape.constant(Tensor::ones(&[n, 1, h, w])), None, None),
        };

        let mut features = self.head.forward(p, input)?;
        for i in 0..self.blocks.len() {
            features = self.igm_block(i, p, &features, Some(&map))?.output;
        }
        let sr = self
            .recon
            .forward(p, &features)?
            .pixel_shuffle(self.config.scale)?;
        Ok(ForwardOutput {
            sr,
            map,
            spatial_map,
            global_intensity,
        })
    }

    /// Gradient-free forward on plain tensors.
    pub fn infer(&self, input: &Tensor<T>) -> Result<(Tensor<T>, IlluminationMap<T>)> {
        let tape = Tape::no_grad();
        let p = self.bind(&tape);
        let x = tape.constant(input.detached());
        let out = self.forward(&p, &x)?;
        Ok((out.sr.to_tensor(), out.illumination_map()))
    }

    /// Replaces every parameter from `(name, tensor)` pairs. The set of names
    /// and every shape must match this model exactly.
    pub fn load_parameters(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(GtfmnError::Input(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                entries.len()
            )));
        }
        let mut staged = self.params.clone();
        let mut seen = std::collections::HashSet::new();
        for (name, tensor) in entries {
            if !seen.insert(name.clone()) {
                return Err(GtfmnError::Input(format!("parameter `{name}` given twice")));
            }
            staged.assign(&name, tensor)?;
        }
        self.params = staged;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(use_illum: bool) -> GtfmnConfig {
        GtfmnConfig {
            width: 4,
            depth: 2,
            use_illumination_stream: use_illum,
            ..GtfmnConfig::default()
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for illum in [true, false] {
            for scale in [2, 4] {
                let cfg = GtfmnConfig { scale, ..tiny(illum) };
                let m = GtfmnModel::<f32>::new(cfg.clone(), 0).unwrap();
                assert_eq!(m.count_parameters(), cfg.parameter_count());
            }
        }
        let cfg = GtfmnConfig {
            use_illumination_stream: false,
            guide_ablation: crate::config::GuideAblation::ConstOne,
            ..tiny(false)
        };
        let m = GtfmnModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.count_parameters(), cfg.parameter_count());
    }

    #[test]
    fn rejects_small_or_wrong_inputs() {
        let m = GtfmnModel::<f32>::new(tiny(true), 0).unwrap();
        let err = m.infer(&Tensor::zeros(&[1, 3, 6, 8])).unwrap_err();
        assert!(err.to_string().contains("at least 7"), "{err}");
        assert!(m.infer(&Tensor::zeros(&[1, 4, 8, 8])).is_err());
        assert!(m.infer(&Tensor::zeros(&[3, 8, 8])).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = GtfmnModel::<f32>::new(tiny(true), 42).unwrap();
        let b = GtfmnModel::<f32>::new(tiny(true), 42).unwrap();
        let c = GtfmnModel::<f32>::new(tiny(true), 43).unwrap();
        assert_eq!(a.params().tensors(), b.params().tensors());
        assert_ne!(a.params().tensors(), c.params().tensors());
    }

    #[test]
    fn load_parameters_rejects_mismatch() {
        let mut m = GtfmnModel::<f32>::new(tiny(true), 0).unwrap();
        let mut entries: Vec<(String, Tensor<f32>)> = m
            .params()
            .iter()
            .map(|(n, t)| (n.to_owned(), t.detached()))
            .collect();
        entries[0].1 = Tensor::zeros(&[1]);
        assert!(m.load_parameters(entries.clone()).is_err());
        entries.pop();
        assert!(m.load_parameters(entries).is_err());
    }
}
