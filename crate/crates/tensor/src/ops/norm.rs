use crate::element::Element;
use crate::error::{arg_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Element> Var<'t, T> {
    /// Layer normalization across the channel axis, independently for every
    /// sample and spatial position. Uses the biased variance, so a channel
    /// vector `[1, 3]` maps to `[-1, 1]` when `eps` is zero. No affine terms.
    pub fn layer_norm_channels(&self, eps: T) -> Result<Var<'t, T>> {
        let (n, c, h, w) = self.value.dims4("layer_norm_channels")?;
        if c == 0 {
            return Err(arg_err("layer_norm_channels", "zero channels"));
        }
        if eps < T::zero() {
            return Err(arg_err("layer_norm_channels", "negative epsilon"));
        }
        let plane = h * w;
        let inv_c = T::one() / T::from_usize(c).unwrap();
        let x = self.value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n * plane];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean = mean + x[base + ch * plane + p];
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = x[base + ch * plane + p] - mean;
                    var = var + d * d;
                }
                var = var * inv_c;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[b * plane + p] = inv;
                for ch in 0..c {
                    let i = base + ch * plane + p;
                    xhat[i] = (x[i] - mean) * inv;
                }
            }
        }
        let shape = self.shape().to_vec();
        let out = Tensor::from_vec(&shape, xhat.clone())?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g = g.data();
                let mut dx = vec![T::zero(); g.len()];
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut mg = T::zero();
                        let mut mgx = T::zero();
                        for ch in 0..c {
                            let i = base + ch * plane + p;
                            mg = mg + g[i];
                            mgx = mgx + g[i] * xhat[i];
                        }
                        mg = mg * inv_c;
                        mgx = mgx * inv_c;
                        let inv = inv_std[b * plane + p];
                        for ch in 0..c {
                            let i = base + ch * plane + p;
                            dx[i] = inv * (g[i] - mg - xhat[i] * mgx);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&shape, dx).unwrap())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn two_channel_vector_normalizes_to_unit_pair() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
        let y = x.layer_norm_channels(0.0).unwrap();
        assert_eq!(y.value().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn positions_are_independent() {
        let tape = Tape::<f64>::no_grad();
        // two positions, three channels
        let x = tape.constant(
            Tensor::from_vec(&[1, 3, 1, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap(),
        );
        let y = x.layer_norm_channels(1e-12).unwrap();
        let d = y.value().data();
        for p in 0..2 {
            let col: Vec<f64> = (0..3).map(|c| d[c * 2 + p]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
