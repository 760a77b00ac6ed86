//! Illumination stream: a full-resolution encoder feeding a structure
//! decoder (spatial light distribution) and a global predictor (scalar mean
//! brightness), merged into the guidance map.

use gtfmn_tensor::{Element, Var};
use rand::Rng;

use super::layers::Conv;
use super::params::{BoundParams, ParamStore};
use crate::config::GtfmnConfig;
use crate::error::{GtfmnError, Result};

#[derive(Debug, Clone)]
pub(crate) struct IlluminationStream {
    encoder: [Conv; 3],
    decoder: Conv,
    global_hidden: Conv,
    global_out: Conv,
    width: usize,
    slope: f64,
}

impl IlluminationStream {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        cfg: &GtfmnConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let c = cfg.width;
        let encoder = [
            Conv::new(store, "illum.encoder.0", 3, c, 3, 1, rng),
            Conv::new(store, "illum.encoder.1", c, c, 3, 1, rng),
            Conv::new(store, "illum.encoder.2", c, c, 3, 1, rng),
        ];
        let decoder = Conv::new(store, "illum.structure", c, 1, 3, 1, rng);
        let h = cfg.global_hidden();
        let global_hidden = Conv::new(store, "illum.global.0", c, h, 1, 1, rng);
        let global_out = Conv::new(store, "illum.global.1", h, 1, 1, 1, rng);
        Self {
            encoder,
            decoder,
            global_hidden,
            global_out,
            width: c,
            slope: cfg.leaky_slope,
        }
    }

    /// N×3×H×W → N×C×H×W, activation between the three convolutions.
    pub(crate) fn encode<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let channels = x.shape().get(1).copied();
        if x.shape().len() != 4 || channels != Some(3) {
            return Err(GtfmnError::Input(format!(
                "illumination encoder expects N×3×H×W, got {:?}",
                x.shape()
            )));
        }
        let slope = T::from_f64_lossy(self.slope);
        let h = self.encoder[0].forward(p, x)?.leaky_relu(slope);
        let h = self.encoder[1].forward(p, &h)?.leaky_relu(slope);
        self.encoder[2].forward(p, &h)
    }

    /// Sigmoid-bounded N×1×H×W map.
    pub(crate) fn spatial_map<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        features: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_features(features)?;
        Ok(self.decoder.forward(p, features)?.sigmoid())
    }

    /// N×1×1×1 brightness in [0, 1].
    pub(crate) fn global_intensity<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        features: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_features(features)?;
        let slope = T::from_f64_lossy(self.slope);
        let pooled = features.adaptive_avg_pool_global()?;
        let h = self.global_hidden.forward(p, &pooled)?.leaky_relu(slope);
        Ok(self.global_out.forward(p, &h)?.sigmoid())
    }

    fn check_features<T: Element>(&self, f: &Var<'_, T>) -> Result<()> {
        if f.shape().len() != 4 || f.shape()[1] != self.width {
            return Err(GtfmnError::Input(format!(
                "expected N×{}×H×W illumination features, got {:?}",
                self.width,
                f.shape()
            )));
        }
        Ok(())
    }
}

/// `M = clamp(M_spatial / (mean(M_spatial) + ε) · g, 0, 1)` with the mean
/// taken per sample over the spatial plane.
///
/// `spatial` is N×1×H×W and `global` N×1×1×1.
pub fn synthesize_illumination_map<'t, T: Element>(
    spatial: &Var<'t, T>,
    global: &Var<'t, T>,
    epsilon: T,
) -> Result<Var<'t, T>> {
    let (n, c, _, _) = spatial.value().dims4("synthesize_illumination_map")?;
    if c != 1 || global.shape() != [n, 1, 1, 1] {
        return Err(GtfmnError::Input(format!(
            "map synthesis expects N×1×H×W and N×1×1×1, got {:?} and {:?}",
            spatial.shape(),
            global.shape()
        )));
    }
    let denom = spatial.spatial_mean()?.add_scalar(epsilon);
    let normalized = spatial.div(&denom)?;
    Ok(normalized.mul(global)?.clamp(T::zero(), T::one())?)
}
