//! Paired samples and the aligned random patch sampler.

use gtfmn_tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::Manifest;
use super::image_io::{crop, load_rgb};
use crate::error::{GtfmnError, Result};

/// An HR image and its degraded LR counterpart, both 3×H×W in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<T: Element> {
    pub id: String,
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
}

impl<T: Element> PairedSample<T> {
    /// Checks that HR is exactly `scale`× LR.
    pub fn new(id: impl Into<String>, hr: Tensor<T>, lr: Tensor<T>, scale: usize) -> Result<Self> {
        let id = id.into();
        let ok = match (hr.shape(), lr.shape()) {
            (&[3, hh, hw], &[3, lh, lw]) => hh == lh * scale && hw == lw * scale && lh > 0 && lw > 0,
            _ => false,
        };
        if !ok {
            return Err(GtfmnError::Input(format!(
                "pair {id}: HR {:?} is not {scale}× LR {:?}",
                hr.shape(),
                lr.shape()
            )));
        }
        Ok(Self { id, hr, lr })
    }

    /// Scale implied by the image sizes.
    pub fn scale(&self) -> usize {
        self.hr.shape()[1] / self.lr.shape()[1]
    }
}

/// Loads every pair of a manifest, checking the HR/LR size ratio against
/// `scale`.
pub fn load_pairs<T: Element>(manifest: &Manifest, scale: usize) -> Result<Vec<PairedSample<T>>> {
    if let Some(s) = manifest.scale {
        if s != scale {
            return Err(GtfmnError::Input(format!(
                "manifest {} was built for scale {s}, expected {scale}",
                manifest.path.display()
            )));
        }
    }
    manifest
        .entries
        .iter()
        .map(|e| PairedSample::new(e.id.clone(), load_rgb(&e.hr_path)?, load_rgb(&e.lr_path)?, scale))
        .collect()
}

/// One of the eight symmetries of the square, applied to the last two axes.
/// Bit 0 flips columns, bit 1 flips rows, bit 2 transposes first.
pub fn dihedral<T: Element>(img: &Tensor<T>, transform: u8) -> Tensor<T> {
    let &[c, h, w] = img.shape() else {
        panic!("dihedral expects C×H×W");
    };
    let transpose = transform & 4 != 0;
    let (oh, ow) = if transpose { (w, h) } else { (h, w) };
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let y2 = if transform & 2 != 0 { oh - 1 - y } else { y };
                let x2 = if transform & 1 != 0 { ow - 1 - x } else { x };
                let (sy, sx) = if transpose { (x2, y2) } else { (y2, x2) };
                out.push(src[ch * h * w + sy * w + sx]);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out).expect("length matches")
}

/// Where a patch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub pair: usize,
    /// LR coordinates of the top-left corner.
    pub top: usize,
    pub left: usize,
    pub transform: u8,
}

#[derive(Debug, Clone)]
pub struct PatchBatch<T: Element> {
    /// N×3×p×p.
    pub lr: Tensor<T>,
    /// N×3×sp×sp.
    pub hr: Tensor<T>,
    pub origins: Vec<PatchOrigin>,
}

/// Cuts the LR window at (`top`, `left`) and the HR window at
/// (`s·top`, `s·left`).
pub fn aligned_patch<T: Element>(
    pair: &PairedSample<T>,
    top: usize,
    left: usize,
    lr_patch: usize,
    scale: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let lr = crop(&pair.lr, top, left, lr_patch, lr_patch)?;
    let hr = crop(&pair.hr, top * scale, left * scale, lr_patch * scale, lr_patch * scale)?;
    Ok((lr, hr))
}

pub struct PatchSampler<T: Element> {
    pairs: Vec<PairedSample<T>>,
    lr_patch: usize,
    batch: usize,
    scale: usize,
    augment: bool,
    rng: ChaCha8Rng,
}

impl<T: Element> PatchSampler<T> {
    pub fn new(
        pairs: Vec<PairedSample<T>>,
        lr_patch: usize,
        batch: usize,
        scale: usize,
        augment: bool,
        seed: u64,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(GtfmnError::Input("patch sampler needs at least one pair".into()));
        }
        if lr_patch == 0 || batch == 0 {
            return Err(GtfmnError::Input(format!(
                "patch size and batch size must be positive (got {lr_patch}, {batch})"
            )));
        }
        for p in &pairs {
            let (h, w) = (p.lr.shape()[1], p.lr.shape()[2]);
            if lr_patch > h.min(w) {
                return Err(GtfmnError::Input(format!(
                    "patch {lr_patch} is larger than LR image {} ({h}×{w})",
                    p.id
                )));
            }
            if p.scale() != scale {
                return Err(GtfmnError::Input(format!(
                    "pair {} has scale {}, sampler expects {scale}",
                    p.id,
                    p.scale()
                )));
            }
        }
        Ok(Self {
            pairs,
            lr_patch,
            batch,
            scale,
            augment,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn pairs(&self) -> &[PairedSample<T>] {
        &self.pairs
    }

    pub fn next_batch(&mut self) -> Result<PatchBatch<T>> {
        let p = self.lr_patch;
        let mut lrs = Vec::with_capacity(self.batch);
        let mut hrs = Vec::with_capacity(self.batch);
        let mut origins = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let pair = self.rng.gen_range(0..self.pairs.len());
            let sample = &self.pairs[pair];
            let top = self.rng.gen_range(0..=sample.lr.shape()[1] - p);
            let left = self.rng.gen_range(0..=sample.lr.shape()[2] - p);
            let transform = if self.augment { self.rng.gen_range(0..8u8) } else { 0 };
            let (mut lr, mut hr) = aligned_patch(sample, top, left, p, self.scale)?;
            if transform != 0 {
                lr = dihedral(&lr, transform);
                hr = dihedral(&hr, transform);
            }
            lrs.push(lr.unsqueeze0());
            hrs.push(hr.unsqueeze0());
            origins.push(PatchOrigin { pair, top, left, transform });
        }
        Ok(PatchBatch {
            lr: Tensor::stack_batch(&lrs)?,
            hr: Tensor::stack_batch(&hrs)?,
            origins,
        })
    }
}
