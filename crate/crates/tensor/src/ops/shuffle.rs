//! Sub-pixel rearrangements between channels and space.

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `out[n, c, h*s + i, w*s + j] = in[n, c*s*s + i*s + j, h, w]`
pub fn pixel_shuffle_tensor<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (n, cs, h, w) = x.dims4("pixel_shuffle")?;
    if s == 0 {
        return Err(arg_err("pixel_shuffle", "scale must be positive"));
    }
    let s2 = s * s;
    if cs % s2 != 0 {
        return Err(shape_err(
            "pixel_shuffle",
            format!("{cs} channels not divisible by scale² = {s2}"),
        ));
    }
    let c = cs / s2;
    let (oh, ow) = (h * s, w * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let ic = ch * s2 + i * s + j;
                    let in_base = (b * cs + ic) * h * w;
                    let out_base = (b * c + ch) * oh * ow;
                    for y in 0..h {
                        for xw in 0..w {
                            out[out_base + (y * s + i) * ow + xw * s + j] =
                                src[in_base + y * w + xw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle_tensor`].
pub fn pixel_unshuffle_tensor<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = x.dims4("pixel_unshuffle")?;
    if s == 0 {
        return Err(arg_err("pixel_unshuffle", "scale must be positive"));
    }
    if oh % s != 0 || ow % s != 0 {
        return Err(shape_err(
            "pixel_unshuffle",
            format!("spatial dims {oh}×{ow} not divisible by {s}"),
        ));
    }
    let (h, w, s2) = (oh / s, ow / s, s * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let oc = ch * s2 + i * s + j;
                    let out_base = (b * c * s2 + oc) * h * w;
                    let in_base = (b * c + ch) * oh * ow;
                    for y in 0..h {
                        for xw in 0..w {
                            out[out_base + y * w + xw] =
                                src[in_base + (y * s + i) * ow + xw * s + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c * s2, h, w], out)
}

impl<'t, T: Element> Var<'t, T> {
    pub fn pixel_shuffle(&self, s: usize) -> Result<Var<'t, T>> {
        let out = pixel_shuffle_tensor(&self.value, s)?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(pixel_unshuffle_tensor(g, s).unwrap())]),
        ))
    }

    pub fn pixel_unshuffle(&self, s: usize) -> Result<Var<'t, T>> {
        let out = pixel_unshuffle_tensor(&self.value, s)?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(pixel_shuffle_tensor(g, s).unwrap())]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle_tensor(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn scale_one_is_identity() {
        let x = Tensor::<f32>::from_vec(&[1, 3, 2, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pixel_shuffle_tensor(&x, 1).unwrap(), x);
    }

    #[test]
    fn rejects_indivisible_channels() {
        let x = Tensor::<f32>::zeros(&[1, 6, 2, 2]);
        assert!(pixel_shuffle_tensor(&x, 2).is_err());
        assert!(pixel_unshuffle_tensor(&Tensor::<f32>::zeros(&[1, 1, 3, 4]), 2).is_err());
    }
}
