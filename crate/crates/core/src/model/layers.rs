use gtfmn_tensor::{Conv2dOptions, Element, Var};
use rand::Rng;

use super::params::{BoundParams, ParamId, ParamStore};
use crate::error::Result;

/// Convolution with bias and "same" padding.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
    opts: Conv2dOptions,
}

impl Conv {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin / groups * kernel * kernel;
        let weight = store.push_uniform(
            format!("{name}.weight"),
            &[cout, cin / groups, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = store.push_uniform(format!("{name}.bias"), &[cout], fan_in, rng);
        Self {
            weight,
            bias,
            opts: Conv2dOptions::same(kernel).with_groups(groups),
        }
    }

    pub(crate) fn forward<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(x.conv2d(p.var(self.weight), Some(p.var(self.bias)), self.opts)?)
    }
}

/// Channel layer norm with per-channel scale and shift.
#[derive(Debug, Clone)]
pub(crate) struct ChannelNorm {
    weight: ParamId,
    bias: ParamId,
    channels: usize,
    eps: f64,
}

impl ChannelNorm {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        eps: f64,
    ) -> Self {
        let weight = store.push(format!("{name}.weight"), gtfmn_tensor::Tensor::ones(&[channels]));
        let bias = store.push(format!("{name}.bias"), gtfmn_tensor::Tensor::zeros(&[channels]));
        Self {
            weight,
            bias,
            channels,
            eps,
        }
    }

    pub(crate) fn forward<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = [1, self.channels, 1, 1];
        let w = p.var(self.weight).reshape(&shape)?;
        let b = p.var(self.bias).reshape(&shape)?;
        Ok(x
            .layer_norm_channels(T::from_f64_lossy(self.eps))?
            .mul(&w)?
            .add(&b)?)
    }
}
