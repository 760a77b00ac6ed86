//! Embedded oracle checks, runnable from the command line.

use std::fmt::Write as _;
use std::time::Instant;

use gtfmn_tensor::{
    check_gradient, pixel_shuffle_tensor, pixel_unshuffle_tensor, relative_error, Conv2dOptions,
    Tape, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::GtfmnConfig;
use crate::data::{bicubic_resize, gamma_darken, LumaRange};
use crate::error::Result;
use crate::metrics::{psnr_mse, ssim};
use crate::model::{synthesize_illumination_map, GtfmnModel};
use crate::optim::{l1_loss, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    /// ε used by the illumination-map checks.
    pub epsilon: f64,
    /// Include the full-model finite-difference check.
    pub full_model: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            full_model: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{}  {:<width$}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(
            out,
            "{} of {} checks passed in {:.1}s",
            self.checks.len() - failed,
            self.checks.len(),
            self.seconds
        );
        out
    }
}

fn record(report: &mut SelftestReport, name: &str, outcome: Result<(bool, String)>) {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    report.checks.push(CheckResult {
        name: name.to_owned(),
        passed,
        detail,
    });
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized")
}

fn weighted_sum<'t>(out: &Var<'t, f64>, seed: u64) -> gtfmn_tensor::Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(out.shape(), &mut rng, -1.0, 1.0);
    Ok(out.mul(&out.tape().constant(w))?.sum_all())
}

/// Map synthesis on plain values, for the oracle checks.
pub fn synthesize_map_values(spatial: &[f64], g: f64, epsilon: f64) -> Result<Vec<f64>> {
    let tape = Tape::<f64>::no_grad();
    let s = tape.constant(Tensor::from_vec(&[1, 1, 1, spatial.len()], spatial.to_vec())?);
    let gv = tape.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![g])?);
    Ok(synthesize_illumination_map(&s, &gv, epsilon)?.value().data().to_vec())
}

/// Per-parameter-tensor relative error between tape gradients of the L1
/// loss and central finite differences, perturbing one scalar at a time.
pub fn model_gradient_check(
    model: &mut GtfmnModel<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let loss_of = |m: &GtfmnModel<f64>| -> Result<f64> {
        let tape = Tape::no_grad();
        let p = m.bind(&tape);
        let out = m.forward(&p, &tape.constant(input.clone()))?;
        Ok(l1_loss(&out.sr, &tape.constant(target.clone()))?.value().data()[0])
    };
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let p = model.bind(&tape);
        let out = model.forward(&p, &tape.constant(input.clone()))?;
        let loss = l1_loss(&out.sr, &tape.constant(target.clone()))?;
        let mut grads = tape.backward(&loss)?;
        p.vars()
            .iter()
            .map(|v| grads.take(v).expect("leaf gradient"))
            .collect()
    };
    let mut out = Vec::new();
    for i in 0..model.params().len() {
        let n = model.params().tensors()[i].numel();
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = model.params().tensors()[i].data()[j];
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig + step;
            let up = loss_of(model)?;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig - step;
            let down = loss_of(model)?;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            numeric[j] = (up - down) / (2.0 * step);
        }
        let name = model.params().names()[i].clone();
        out.push((name, relative_error(analytic[i].data(), &numeric)));
    }
    Ok(out)
}

fn gradient_checks(report: &mut SelftestReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rtol = 1e-5;
    let step = 1e-6;
    let grad = |report: &mut SelftestReport, name: &str, r: Result<f64>| {
        record(report, name, r.map(|e| (e <= rtol, format!("relative error {e:.2e}"))));
    };

    let x = random(&[1, 4, 6, 6], &mut rng, -1.0, 1.0);
    let w = random(&[6, 2, 3, 3], &mut rng, -1.0, 1.0);
    let r = check_gradient(
        |t, v| {
            let wv = t.constant(w.clone());
            weighted_sum(&v.conv2d(&wv, None, Conv2dOptions::same(3).with_groups(2))?, 1)
        },
        &x,
        step,
    );
    grad(report, "gradient: grouped convolution", r.map(|g| g.relative_error).map_err(Into::into));

    let r = check_gradient(|_, v| weighted_sum(&v.layer_norm_channels(1e-6)?, 2), &x, step);
    grad(report, "gradient: channel layer norm", r.map(|g| g.relative_error).map_err(Into::into));

    let r = check_gradient(|_, v| weighted_sum(&v.pixel_shuffle(2)?, 3), &x, step);
    grad(report, "gradient: pixel shuffle", r.map(|g| g.relative_error).map_err(Into::into));

    let r = check_gradient(
        |_, v| weighted_sum(&v.sigmoid().mul(&v.leaky_relu(0.2))?.add(&v.spatial_mean()?)?, 4),
        &x,
        step,
    );
    grad(report, "gradient: activations and pooling", r.map(|g| g.relative_error).map_err(Into::into));

    let spatial = random(&[1, 1, 4, 4], &mut rng, 0.1, 0.9);
    let r = check_gradient(
        |t, v| {
            let g = t.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![0.3]).unwrap());
            let m = synthesize_illumination_map(&v, &g, 1e-4).map_err(|e| TensorError::Format(e.to_string()))?;
            weighted_sum(&m, 5)
        },
        &spatial,
        step,
    );
    grad(report, "gradient: illumination map synthesis", r.map(|g| g.relative_error).map_err(Into::into));
}

fn full_model_check(report: &mut SelftestReport) {
    let outcome = (|| -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut model = GtfmnModel::<f64>::new(GtfmnConfig::new(2, 4, 1), 3)?;
        let input = random(&[1, 3, 8, 8], &mut rng, 0.0, 1.0);
        let target = random(&[1, 3, 16, 16], &mut rng, 0.0, 1.0);
        let errs = model_gradient_check(&mut model, &input, &target, 1e-5)?;
        let (worst_name, worst) = errs
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .cloned()
            .unwrap_or_default();
        Ok((
            worst <= 1e-5,
            format!("{} tensors, worst {worst:.2e} ({worst_name})", errs.len()),
        ))
    })();
    record(report, "gradient: full model, C=4 N=1 8×8", outcome);
}

fn illumination_checks(report: &mut SelftestReport, eps: f64) {
    let close = |a: &[f64], b: &[f64], tol: f64| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    };
    record(
        report,
        "illumination map: constant fixed point",
        synthesize_map_values(&[0.5; 4], 0.5, eps)
            .map(|m| (close(&m, &[0.5; 4], 1e-3), format!("{m:?}"))),
    );
    record(
        report,
        "illumination map: clamped two-pixel case",
        synthesize_map_values(&[0.2, 0.6], 0.8, eps)
            .map(|m| (close(&m, &[0.4, 1.0], 1e-3), format!("{m:?}"))),
    );
    record(
        report,
        "illumination map: zero spatial map",
        synthesize_map_values(&[0.0; 4], 0.7, eps).map(|m| (close(&m, &[0.0; 4], 0.0), format!("{m:?}"))),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut outcome = Ok(());
    for _ in 0..200 {
        let g = rng.gen_range(0.05..0.95);
        // Keep every normalized value below 1 so the clamp stays inactive.
        let base: f64 = rng.gen_range(0.2..0.8);
        let spatial: Vec<f64> = (0..16).map(|_| base * rng.gen_range(0.9..1.0)).collect();
        match synthesize_map_values(&spatial, g, eps) {
            Ok(m) => worst = worst.max((m.iter().sum::<f64>() / m.len() as f64 - g).abs()),
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    record(
        report,
        "illumination map: mean tracks global intensity",
        outcome.map(|()| (worst <= 2e-3, format!("max |mean(M) − g| = {worst:.2e}"))),
    );
}

fn shuffle_checks(report: &mut SelftestReport) {
    let outcome = (|| -> Result<(bool, String)> {
        let x = Tensor::<f64>::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0])?;
        let y = pixel_shuffle_tensor(&x, 2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let r = random(&[2, 12, 3, 5], &mut rng, -1.0, 1.0);
        let back = pixel_unshuffle_tensor(&pixel_shuffle_tensor(&r, 2)?, 2)?;
        let ok = y.shape() == [1, 1, 2, 2] && y.data() == [1.0, 2.0, 3.0, 4.0] && back == r;
        Ok((ok, format!("1×4×1×1 → {:?}", y.data())))
    })();
    record(report, "pixel shuffle: index map and round trip", outcome);
}

fn metric_checks(report: &mut SelftestReport) {
    let full = LumaRange::Full;
    let a = Tensor::<f64>::full(&[3, 16, 16], 0.5);
    let b = Tensor::<f64>::full(&[3, 16, 16], 0.6);
    record(
        report,
        "metrics: PSNR of uniform 0.1 error",
        psnr_mse(&a, &b, 0, full).map(|(p, _)| ((p - 20.0).abs() <= 1e-4, format!("{p:.6} dB"))),
    );
    let c = a.map(|v| v + 1.0 / 255.0);
    record(
        report,
        "metrics: PSNR of uniform 1/255 error",
        psnr_mse(&a, &c, 0, full)
            .map(|(p, m)| ((p - 48.1308).abs() <= 1e-3 && (m - 1.0).abs() < 1e-9, format!("{p:.6} dB, mse {m:.6}"))),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random(&[3, 16, 16], &mut rng, 0.0, 1.0);
    let y = random(&[3, 16, 16], &mut rng, 0.0, 1.0);
    record(
        report,
        "metrics: SSIM identity and symmetry",
        (|| -> Result<(bool, String)> {
            let same = ssim(&x, &x, 0, full)?;
            let (ab, ba) = (ssim(&x, &y, 0, full)?, ssim(&y, &x, 0, full)?);
            Ok((
                (same - 1.0).abs() <= 1e-9 && (ab - ba).abs() <= 1e-9,
                format!("ssim(x,x) = {same:.12}, |ssim(x,y) − ssim(y,x)| = {:.1e}", (ab - ba).abs()),
            ))
        })(),
    );
}

fn degradation_checks(report: &mut SelftestReport) {
    record(
        report,
        "degradation: gamma darkening",
        Tensor::<f64>::from_vec(&[1], vec![0.5])
            .map_err(Into::into)
            .and_then(|t| gamma_darken(&t, 2.2))
            .map(|t| {
                let v = t.data()[0];
                ((v - 0.21764).abs() <= 1e-5, format!("0.5^2.2 = {v:.6}"))
            }),
    );
    record(
        report,
        "degradation: bicubic keeps constants",
        bicubic_resize(&Tensor::<f64>::full(&[3, 12, 10], 0.37), 6, 5).map(|t| {
            let err = t.data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max);
            (err <= 1e-6, format!("max deviation {err:.1e}"))
        }),
    );
}

fn adam_check(report: &mut SelftestReport) {
    let outcome = (|| -> Result<(bool, String)> {
        let mut p = vec![Tensor::<f64>::from_vec(&[1], vec![1.0])?];
        p[0].set_grad(vec![3.0])?;
        let mut adam = Adam::new(AdamConfig::default())?;
        adam.step(&mut p)?;
        let delta = p[0].data()[0] - 1.0;
        // m̂ = 3, v̂ = 9: Δ = −lr·3/(3 + eps)
        let expected = -2e-4 * 3.0 / (3.0 + 1e-8);
        Ok(((delta - expected).abs() < 1e-15, format!("first step Δθ = {delta:.6e}")))
    })();
    record(report, "adam: bias-corrected first step", outcome);
}

pub fn run_selftest(options: &SelftestOptions) -> SelftestReport {
    let started = Instant::now();
    let mut report = SelftestReport::default();
    gradient_checks(&mut report);
    if options.full_model {
        full_model_check(&mut report);
    }
    illumination_checks(&mut report, options.epsilon);
    shuffle_checks(&mut report);
    metric_checks(&mut report);
    degradation_checks(&mut report);
    adam_check(&mut report);
    report.seconds = started.elapsed().as_secs_f64();
    report
}
