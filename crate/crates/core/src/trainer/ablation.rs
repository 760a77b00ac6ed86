use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::eval::{evaluate_model, EvalOptions};
use super::run::Trainer;
use crate::data::PairedSample;
use crate::error::{io_err, GtfmnError, Result};
use crate::metrics::{format_db, MetricSummary};

/// A named evaluation set.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub name: String,
    pub pairs: Vec<PairedSample<f32>>,
}

/// One trained variant and its scores.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub depth: usize,
    pub illumination: bool,
    pub parameters: usize,
    /// Guidance-map reads over training and evaluation.
    pub guide_reads: usize,
    pub final_loss: f64,
    pub seconds: f64,
    pub results: Vec<MetricSummary>,
}

impl AblationRow {
    pub fn mean_psnr(&self, set: usize) -> f64 {
        self.results[set].mean.psnr
    }

    pub fn mean_ssim(&self, set: usize) -> f64 {
        self.results[set].mean.ssim
    }
}

fn run_variant(
    label: String,
    config: TrainConfig,
    train: &[PairedSample<f32>],
    tests: &[TestSet],
    run_root: Option<&Path>,
) -> Result<AblationRow> {
    let dir = run_root.map(|r| r.join(&label));
    let started = Instant::now();
    let trainer = Trainer::new(config.clone(), train.to_vec(), dir.as_deref())?;
    let parameters = trainer.model().count_parameters();
    let outcome = trainer.run(&[])?;
    let opts = EvalOptions {
        border_crop: config.border(),
        luma: config.luma,
        parallel: false,
    };
    let results = tests
        .iter()
        .map(|t| evaluate_model(&outcome.model, &t.pairs, opts, &t.name))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &dir {
        for r in &results {
            let path = dir.join(format!("eval_{}.csv", r.label));
            fs::write(&path, r.to_csv()).map_err(io_err(format!("writing {}", path.display())))?;
        }
    }
    Ok(AblationRow {
        label,
        depth: config.model.depth,
        illumination: config.model.use_illumination_stream,
        parameters,
        guide_reads: outcome.model.guide_reads(),
        final_loss: outcome.log.final_loss().unwrap_or(f64::NAN),
        seconds: started.elapsed().as_secs_f64(),
        results,
    })
}

fn run_all(
    variants: Vec<(String, TrainConfig)>,
    train: &[PairedSample<f32>],
    tests: &[TestSet],
    run_root: Option<&Path>,
    parallel: bool,
) -> Result<Vec<AblationRow>> {
    if tests.is_empty() {
        return Err(GtfmnError::Input("ablation needs at least one test set".into()));
    }
    let go = |(label, cfg): (String, TrainConfig)| run_variant(label, cfg, train, tests, run_root);
    if parallel {
        variants.into_par_iter().map(go).collect()
    } else {
        variants.into_iter().map(go).collect()
    }
}

fn write_report(run_root: Option<&Path>, stem: &str, text: &str, json: String) -> Result<()> {
    if let Some(root) = run_root {
        fs::create_dir_all(root).map_err(io_err(format!("creating {}", root.display())))?;
        for (ext, body) in [("txt", text.to_owned()), ("json", json)] {
            let path = root.join(format!("{stem}.{ext}"));
            fs::write(&path, body).map_err(io_err(format!("writing {}", path.display())))?;
        }
    }
    Ok(())
}

/// Depth sweep: one row per block count, PSNR and SSIM per test set.
#[derive(Debug, Clone, Serialize)]
pub struct BlockAblation {
    pub test_sets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl BlockAblation {
    pub fn to_text(&self) -> String {
        let mut out = String::from("| Blocks | Params |");
        for s in &self.test_sets {
            let _ = write!(out, " {s} PSNR | {s} SSIM |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|---|".repeat(self.test_sets.len()));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} | {} |", r.depth, r.parameters);
            for i in 0..self.test_sets.len() {
                let _ = write!(out, " {} | {:.4} |", format_db(r.mean_psnr(i)), r.mean_ssim(i));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one model per depth with a shared seed and corpus.
pub fn ablate_blocks(
    base: &TrainConfig,
    depths: &[usize],
    train: &[PairedSample<f32>],
    tests: &[TestSet],
    run_root: Option<&Path>,
) -> Result<BlockAblation> {
    if depths.is_empty() {
        return Err(GtfmnError::Input("no depths to sweep".into()));
    }
    let variants = depths
        .iter()
        .map(|&d| {
            let mut cfg = base.clone();
            cfg.model.depth = d;
            (format!("depth_{d}"), cfg)
        })
        .collect();
    let rows = run_all(variants, train, tests, run_root, !base.deterministic)?;
    let report = BlockAblation {
        test_sets: tests.iter().map(|t| t.name.clone()).collect(),
        rows,
    };
    write_report(
        run_root,
        "ablate_blocks",
        &report.to_text(),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// Matched runs with and without the illumination stream.
#[derive(Debug, Clone, Serialize)]
pub struct IlluminationAblation {
    pub test_sets: Vec<String>,
    /// `[with, without]`.
    pub rows: Vec<AblationRow>,
}

impl IlluminationAblation {
    pub fn with_stream(&self) -> &AblationRow {
        &self.rows[0]
    }

    pub fn without_stream(&self) -> &AblationRow {
        &self.rows[1]
    }

    /// PSNR of the full model minus PSNR without the stream, per test set.
    pub fn psnr_gap(&self) -> Vec<f64> {
        (0..self.test_sets.len())
            .map(|i| self.with_stream().mean_psnr(i) - self.without_stream().mean_psnr(i))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("| Test set | Variant | PSNR | SSIM | Params | Guide reads |\n|---|---|---|---|---|---|\n");
        for (i, s) in self.test_sets.iter().enumerate() {
            for r in &self.rows {
                let _ = writeln!(
                    out,
                    "| {s} | {} | {} | {:.4} | {} | {} |",
                    r.label,
                    format_db(r.mean_psnr(i)),
                    r.mean_ssim(i),
                    r.parameters,
                    r.guide_reads
                );
            }
        }
        for (s, gap) in self.test_sets.iter().zip(self.psnr_gap()) {
            let direction = if gap > 0.0 {
                "stream helps"
            } else if gap < 0.0 {
                "stream hurts"
            } else {
                "no difference"
            };
            let _ = writeln!(out, "{s}: PSNR gap {gap:+.4} dB ({direction})");
        }
        out
    }
}

pub fn ablate_illumination(
    base: &TrainConfig,
    train: &[PairedSample<f32>],
    tests: &[TestSet],
    run_root: Option<&Path>,
) -> Result<IlluminationAblation> {
    let variants = [true, false]
        .into_iter()
        .map(|on| {
            let mut cfg = base.clone();
            cfg.model.use_illumination_stream = on;
            let label = if on { "illum_on" } else { "illum_off" };
            (label.to_owned(), cfg)
        })
        .collect();
    let rows = run_all(variants, train, tests, run_root, !base.deterministic)?;
    let report = IlluminationAblation {
        test_sets: tests.iter().map(|t| t.name.clone()).collect(),
        rows,
    };
    write_report(
        run_root,
        "ablate_illum",
        &report.to_text(),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}
