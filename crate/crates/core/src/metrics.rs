//! PSNR, MSE and SSIM on the luma channel.
//!
//! Images may be 3×H×W, 1×3×H×W (RGB, converted to luma) or 1×H×W,
//! 1×1×H×W (already luma). MSE is reported on the 0–255 scale and PSNR uses
//! peak 255, so identical images give `mse = 0` and `psnr = +∞`.

use std::fmt::Write as _;

use gtfmn_tensor::{Element, Tensor};
use serde::{Serialize, Serializer};

use crate::data::{rgb_to_y, LumaRange};
use crate::error::{GtfmnError, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;

/// Luma plane of one image as `(height, width, values)`.
fn luma_plane<T: Element>(img: &Tensor<T>, luma: LumaRange) -> Result<(usize, usize, Vec<f64>)> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] | &[1, c, h, w] => (c, h, w),
        other => {
            return Err(GtfmnError::Input(format!(
                "metrics take a single image, got shape {other:?}"
            )))
        }
    };
    match c {
        1 => Ok((h, w, img.to_f64_vec())),
        3 => {
            let rgb = img.reshape(&[1, 3, h, w])?;
            Ok((h, w, rgb_to_y(&rgb, luma)?.to_f64_vec()))
        }
        _ => Err(GtfmnError::Input(format!("metrics expect 1 or 3 channels, got {c}"))),
    }
}

fn cropped<T: Element>(
    pred: &Tensor<T>,
    reference: &Tensor<T>,
    border: usize,
    luma: LumaRange,
) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    if pred.shape() != reference.shape() {
        return Err(GtfmnError::Input(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            pred.shape(),
            reference.shape()
        )));
    }
    let (h, w, a) = luma_plane(pred, luma)?;
    let (_, _, b) = luma_plane(reference, luma)?;
    if 2 * border >= h || 2 * border >= w {
        return Err(GtfmnError::Input(format!(
            "border crop {border} leaves nothing of a {h}×{w} image"
        )));
    }
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let pick = |v: &[f64]| -> Vec<f64> {
        (border..h - border)
            .flat_map(|y| v[y * w + border..y * w + w - border].iter().copied())
            .collect()
    };
    Ok((ch, cw, pick(&a), pick(&b)))
}

/// `(psnr_db, mse_255)` after cropping `border` pixels from every side.
pub fn psnr_mse<T: Element>(pred: &Tensor<T>, reference: &Tensor<T>, border: usize, luma: LumaRange) -> Result<(f64, f64)> {
    let (_, _, a, b) = cropped(pred, reference, border, luma)?;
    let mse_unit = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    let psnr = if mse_unit == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse_unit).log10()
    };
    Ok((psnr, mse_unit * 255.0 * 255.0))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering with the 1-D window `k`.
fn filter_valid(v: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * v[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), dynamic range
/// 1, averaged over all positions where the window fits.
pub fn ssim<T: Element>(pred: &Tensor<T>, reference: &Tensor<T>, border: usize, luma: LumaRange) -> Result<f64> {
    let (h, w, a, b) = cropped(pred, reference, border, luma)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(GtfmnError::Input(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels after cropping, got {h}×{w}"
        )));
    }
    let k = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a, h, w, &k);
    let mu_b = filter_valid(&b, h, w, &k);
    let e_aa = filter_valid(&prod(&a, &a), h, w, &k);
    let e_bb = filter_valid(&prod(&b, &b), h, w, &k);
    let e_ab = filter_valid(&prod(&a, &b), h, w, &k);
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_db(*v))
    }
}

/// `inf` for identical images, otherwise four decimals.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub id: String,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub mse: f64,
    pub ssim: f64,
    pub border_crop: usize,
}

impl MetricReport {
    pub fn compute<T: Element>(
        id: impl Into<String>,
        pred: &Tensor<T>,
        reference: &Tensor<T>,
        border_crop: usize,
        luma: LumaRange,
    ) -> Result<Self> {
        let (psnr, mse) = psnr_mse(pred, reference, border_crop, luma)?;
        Ok(Self {
            id: id.into(),
            psnr,
            mse,
            ssim: ssim(pred, reference, border_crop, luma)?,
            border_crop,
        })
    }
}

/// Per-image rows and their mean, averaged image by image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub label: String,
    pub rows: Vec<MetricReport>,
    pub mean: MetricReport,
    pub averaging: &'static str,
}

impl MetricSummary {
    pub fn new(label: impl Into<String>, rows: Vec<MetricReport>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| GtfmnError::Input("no metric rows to aggregate".into()))?;
        let n = rows.len() as f64;
        let mean = MetricReport {
            id: "mean".into(),
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            border_crop: first.border_crop,
        };
        Ok(Self {
            label: label.into(),
            rows,
            mean,
            averaging: "per-image",
        })
    }

    /// `id psnr mse ssim` lines followed by the mean row.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# {} border_crop={} averaging={}\nid psnr mse ssim\n",
            self.label, self.mean.border_crop, self.averaging
        );
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(out, "{} {} {:.4} {:.4}", r.id, format_db(r.psnr), r.mse, r.ssim);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr,mse,ssim\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.id, format_db(r.psnr), r.mse, r.ssim);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..SSIM_WINDOW {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn crop_errors() {
        let a = Tensor::<f64>::zeros(&[3, 6, 6]);
        assert!(psnr_mse(&a, &a, 3, LumaRange::Full).is_err());
        assert!(psnr_mse(&a, &a, 2, LumaRange::Full).is_ok());
        assert!(ssim(&a, &a, 0, LumaRange::Full).is_err());
        assert!(psnr_mse(&a, &Tensor::zeros(&[3, 6, 5]), 0, LumaRange::Full).is_err());
    }

    #[test]
    fn infinite_psnr_serializes_as_text() {
        let a = Tensor::<f64>::full(&[1, 12, 12], 0.3);
        let r = MetricReport::compute("x", &a, &a, 0, LumaRange::Full).unwrap();
        assert_eq!(r.psnr, f64::INFINITY);
        let s = MetricSummary::new("t", vec![r]).unwrap();
        assert!(s.to_json().contains("\"inf\""));
        assert!(s.to_text().lines().last().unwrap().starts_with("mean inf"));
    }
}
