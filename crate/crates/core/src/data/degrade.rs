//! Synthetic low-light degradation: gamma darkening followed by bicubic
//! downsampling.

use gtfmn_tensor::{Element, Tensor};

use crate::error::{GtfmnError, Result};

/// Catmull-Rom cubic convolution coefficient.
pub const BICUBIC_A: f64 = -0.5;

/// Raises every value to `gamma`; `gamma > 1` darkens.
pub fn gamma_darken<T: Element>(img: &Tensor<T>, gamma: f64) -> Result<Tensor<T>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GtfmnError::Input(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    let g = T::from_f64_lossy(gamma);
    Ok(img.map(|v| v.max(T::zero()).powf(g)))
}

/// Keys' cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four taps and weights for each output position along one axis.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    (0..dst_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let base = center.floor();
            let t = center - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let offset = k as f64 - 1.0;
                idx[k] = (base as isize + k as isize - 1).clamp(0, last) as usize;
                wts[k] = cubic_kernel(t - offset);
            }
            (idx, wts)
        })
        .collect()
}

/// Separable Catmull-Rom resampling of a C×H×W or N×C×H×W image to
/// `height × width`, sampling at pixel centres with edge-clamped borders.
/// The result is clamped to [0, 1].
pub fn bicubic_resize<T: Element>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(GtfmnError::Input(format!(
            "target size {height}×{width} must be positive"
        )));
    }
    let (lead, h, w) = match img.shape() {
        &[c, h, w] => (vec![c], h, w),
        &[n, c, h, w] => (vec![n, c], h, w),
        other => {
            return Err(GtfmnError::Input(format!(
                "bicubic_resize expects C×H×W or N×C×H×W, got {other:?}"
            )))
        }
    };
    if h == 0 || w == 0 {
        return Err(GtfmnError::Input("cannot resize an empty image".into()));
    }
    let planes: usize = lead.iter().product();
    let xt = axis_taps(w, width);
    let yt = axis_taps(h, height);
    let src = img.data();
    let mut out = Vec::with_capacity(planes * height * width);
    let mut rows = vec![0.0f64; h * width];
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let line = &plane[y * w..(y + 1) * w];
            for (x, (idx, wts)) in xt.iter().enumerate() {
                rows[y * width + x] = (0..4).map(|k| wts[k] * line[idx[k]].as_f64()).sum();
            }
        }
        for (idx, wts) in &yt {
            for x in 0..width {
                let v: f64 = (0..4).map(|k| wts[k] * rows[idx[k] * width + x]).sum();
                out.push(T::from_f64_lossy(v.clamp(0.0, 1.0)));
            }
        }
    }
    let mut shape = lead;
    shape.extend([height, width]);
    Ok(Tensor::from_vec(&shape, out)?)
}

/// Darkens then downsamples an HR image by `scale`. HR extents must be
/// multiples of `scale`.
pub fn degrade<T: Element>(hr: &Tensor<T>, gamma: f64, scale: usize) -> Result<Tensor<T>> {
    let (h, w) = match hr.shape() {
        &[_, h, w] | &[_, _, h, w] => (h, w),
        other => return Err(GtfmnError::Input(format!("bad image shape {other:?}"))),
    };
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(GtfmnError::Input(format!(
            "HR size {h}×{w} is not a multiple of scale {scale}"
        )));
    }
    let dark = gamma_darken(hr, gamma)?;
    bicubic_resize(&dark, h / scale, w / scale)
}

/// Luma convention for the Y channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LumaRange {
    /// `Y = 0.299 R + 0.587 G + 0.114 B`.
    #[default]
    Full,
    /// BT.601 studio swing, `Y ∈ [16/255, 235/255]`.
    Studio,
}

impl std::str::FromStr for LumaRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(LumaRange::Full),
            "studio" => Ok(LumaRange::Studio),
            other => Err(format!("unknown luma range {other:?} (expected full|studio)")),
        }
    }
}

impl std::fmt::Display for LumaRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LumaRange::Full => "full",
            LumaRange::Studio => "studio",
        })
    }
}

/// N×3×H×W (or 3×H×W) RGB → N×1×H×W (or 1×H×W) luma.
pub fn rgb_to_y<T: Element>(img: &Tensor<T>, range: LumaRange) -> Result<Tensor<T>> {
    let (n, c, h, w, rank3) = match img.shape() {
        &[c, h, w] => (1, c, h, w, true),
        &[n, c, h, w] => (n, c, h, w, false),
        other => {
            return Err(GtfmnError::Input(format!(
                "rgb_to_y expects N×3×H×W, got {other:?}"
            )))
        }
    };
    if c != 3 {
        return Err(GtfmnError::Input(format!("rgb_to_y expects 3 channels, got {c}")));
    }
    let (kr, kg, kb, offset) = match range {
        LumaRange::Full => (0.299, 0.587, 0.114, 0.0),
        LumaRange::Studio => (65.481 / 255.0, 128.553 / 255.0, 24.966 / 255.0, 16.0 / 255.0),
    };
    let plane = h * w;
    let src = img.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let r = src[base + i].as_f64();
            let g = src[base + plane + i].as_f64();
            let bl = src[base + 2 * plane + i].as_f64();
            out.push(T::from_f64_lossy(offset + kr * r + kg * g + kb * bl));
        }
    }
    let shape: Vec<usize> = if rank3 { vec![1, h, w] } else { vec![n, 1, h, w] };
    Ok(Tensor::from_vec(&shape, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for t in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (0..4).map(|k| cubic_kernel(t - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
    }

    #[test]
    fn gamma_fixed_points_and_value() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0, 1.0, 0.5]).unwrap();
        let y = gamma_darken(&x, 2.2).unwrap();
        assert_eq!(&y.data()[..2], &[0.0, 1.0]);
        assert!((y.data()[2] - 0.21764).abs() < 1e-5);
        assert!(gamma_darken(&x, 0.0).is_err());
        assert!(gamma_darken(&x, -1.0).is_err());
    }

    #[test]
    fn luma_coefficients() {
        let px = |r, g, b| Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![r, g, b]).unwrap();
        let y = |t: Tensor<f64>| rgb_to_y(&t, LumaRange::Full).unwrap().data()[0];
        assert!((y(px(1.0, 1.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((y(px(1.0, 0.0, 0.0)) - 0.299).abs() < 1e-12);
        assert!((y(px(0.3, 0.3, 0.3)) - 0.3).abs() < 1e-12);
        let studio = rgb_to_y(&px(1.0, 1.0, 1.0), LumaRange::Studio).unwrap();
        assert!((studio.data()[0] - 235.0 / 255.0).abs() < 1e-12);
        assert!(rgb_to_y(&Tensor::<f64>::zeros(&[1, 4, 2, 2]), LumaRange::Full).is_err());
    }

    #[test]
    fn resize_identity_and_errors() {
        let img = Tensor::<f32>::from_vec(&[1, 2, 3], vec![0.1, 0.9, 0.4, 0.3, 0.0, 1.0]).unwrap();
        assert_eq!(bicubic_resize(&img, 2, 3).unwrap(), img);
        assert!(bicubic_resize(&img, 0, 3).is_err());
        assert!(degrade(&img, 2.2, 2).is_err());
    }
}
