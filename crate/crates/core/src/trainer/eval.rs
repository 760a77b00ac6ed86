use std::path::Path;

use gtfmn_tensor::Element;
use rayon::prelude::*;

use crate::checkpoint::load_checkpoint;
use crate::data::{bicubic_resize, load_pairs, read_manifest, LumaRange, PairedSample};
use crate::error::{GtfmnError, Result};
use crate::metrics::{MetricReport, MetricSummary};
use crate::model::GtfmnModel;

/// Metric options shared by every evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub border_crop: usize,
    pub luma: LumaRange,
    /// Evaluate images on the rayon pool.
    pub parallel: bool,
}

impl EvalOptions {
    pub fn for_scale(scale: usize) -> Self {
        Self {
            border_crop: scale,
            luma: LumaRange::Full,
            parallel: false,
        }
    }
}

fn collect<T: Element>(
    label: &str,
    pairs: &[PairedSample<T>],
    opts: EvalOptions,
    predict: impl Fn(&PairedSample<T>) -> Result<MetricReport> + Sync,
) -> Result<MetricSummary> {
    let rows: Result<Vec<MetricReport>> = if opts.parallel {
        pairs.par_iter().map(&predict).collect()
    } else {
        pairs.iter().map(&predict).collect()
    };
    MetricSummary::new(label, rows?)
}

/// Super-resolves every LR image and scores it against its HR image.
pub fn evaluate_model<T: Element>(
    model: &GtfmnModel<T>,
    pairs: &[PairedSample<T>],
    opts: EvalOptions,
    label: &str,
) -> Result<MetricSummary> {
    let scale = model.config().scale;
    if let Some(p) = pairs.iter().find(|p| p.scale() != scale) {
        return Err(GtfmnError::Input(format!(
            "pair {} has scale {} but the model upscales by {scale}",
            p.id,
            p.scale()
        )));
    }
    collect(label, pairs, opts, |pair| {
        let (sr, _) = model.infer(&pair.lr.unsqueeze0())?;
        let sr = sr.reshape(pair.hr.shape())?;
        MetricReport::compute(pair.id.clone(), &sr, &pair.hr, opts.border_crop, opts.luma)
    })
}

/// Plain bicubic upscaling of the LR input, the reference point for every
/// learned model.
pub fn bicubic_baseline<T: Element>(
    pairs: &[PairedSample<T>],
    opts: EvalOptions,
    label: &str,
) -> Result<MetricSummary> {
    collect(label, pairs, opts, |pair| {
        let (h, w) = (pair.hr.shape()[1], pair.hr.shape()[2]);
        let up = bicubic_resize(&pair.lr, h, w)?;
        MetricReport::compute(pair.id.clone(), &up, &pair.hr, opts.border_crop, opts.luma)
    })
}

/// Loads a checkpoint and a manifest and scores the model. A `None`
/// border crop means "the model's scale".
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest: &Path,
    border_crop: Option<usize>,
    luma: LumaRange,
    parallel: bool,
) -> Result<MetricSummary> {
    let (model, meta) = load_checkpoint::<f32>(checkpoint)?;
    let manifest = read_manifest(manifest)?;
    let scale = meta.config.scale;
    if let Some(s) = manifest.scale {
        if s != scale {
            return Err(GtfmnError::Input(format!(
                "checkpoint upscales by {scale} but the test set was built for scale {s}"
            )));
        }
    }
    let pairs = load_pairs::<f32>(&manifest, scale)?;
    let opts = EvalOptions {
        border_crop: border_crop.unwrap_or(scale),
        luma,
        parallel,
    };
    evaluate_model(&model, &pairs, opts, &manifest.path.display().to_string())
}
