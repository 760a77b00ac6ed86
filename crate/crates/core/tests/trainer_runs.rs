use std::fs;

use gtfmn_core::checkpoint::load_checkpoint;
use gtfmn_core::data::{degrade, test_chart, PairedSample};
use gtfmn_core::trainer::{bicubic_baseline, evaluate_model, train_on_pairs, EvalOptions, TrainConfig, Trainer};
use gtfmn_core::{GtfmnConfig, GtfmnError, GtfmnModel};

fn pairs(count: usize, lr: usize, scale: usize) -> Vec<PairedSample<f32>> {
    (0..count)
        .map(|i| {
            let hr = test_chart(i, lr * scale, lr * scale, 3);
            let lr_img = degrade(&hr, 2.2, scale).unwrap();
            PairedSample::new(format!("chart_{i}"), hr, lr_img, scale).unwrap()
        })
        .collect()
}

fn tiny_config(steps: usize) -> TrainConfig {
    TrainConfig {
        model: GtfmnConfig::new(2, 8, 1),
        lr_patch: 12,
        batch: 2,
        steps,
        lr: 1e-3,
        checkpoint_every: 5,
        log_every: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn smoke_run_writes_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let data = pairs(2, 16, 2);
    let out = train_on_pairs(&tiny_config(10), data.clone(), &data, Some(&dir)).unwrap();
    assert_eq!(out.log.losses.len(), 10);
    assert!(out.log.losses.iter().all(|(_, l)| l.is_finite()));
    for f in ["config.txt", "loss.csv", "ckpt_000005.bin", "ckpt_final.bin", "eval_000010.csv", "eval_000010.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(dir.join("loss.csv")).unwrap().lines().count(), 11);
    let (model, meta) = load_checkpoint::<f32>(&dir.join("ckpt_final.bin")).unwrap();
    assert_eq!(meta.step, 10);
    assert_eq!(model.params().tensors(), out.model.params().tensors());
    assert_eq!(out.log.evals.len(), 1);
    assert_eq!(out.log.evals[0].1.rows.len(), 2);
}

#[test]
fn training_is_deterministic() {
    let data = pairs(2, 16, 2);
    let a = train_on_pairs(&tiny_config(6), data.clone(), &[], None).unwrap();
    let b = train_on_pairs(&tiny_config(6), data.clone(), &[], None).unwrap();
    assert_eq!(a.log.losses, b.log.losses);
    assert_eq!(a.model.params().tensors(), b.model.params().tensors());
    let c = train_on_pairs(&TrainConfig { seed: 1, ..tiny_config(6) }, data, &[], None).unwrap();
    assert_ne!(a.log.losses, c.log.losses);
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { lr: 1e30, ..tiny_config(50) };
    let err = train_on_pairs(&cfg, pairs(1, 16, 2), &[], Some(tmp.path())).err().unwrap();
    match err {
        GtfmnError::NonFiniteLoss { step, checkpoint } => {
            assert!(step > 1);
            let path = checkpoint.expect("checkpoint written");
            assert!(path.ends_with("ckpt_lastgood.bin"));
            let (model, meta) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(meta.step, step - 1);
            assert!(model.params().tensors().iter().all(|t| t.all_finite()));
        }
        other => panic!("expected a non-finite abort, got {other}"),
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let data = pairs(3, 16, 2);
    let opts = EvalOptions::for_scale(2);
    let rows: Vec<_> = data
        .iter()
        .map(|p| gtfmn_core::metrics::MetricReport::compute(&p.id, &p.hr, &p.hr, opts.border_crop, opts.luma).unwrap())
        .collect();
    assert!(rows.iter().all(|r| r.psnr == f64::INFINITY && (r.ssim - 1.0).abs() < 1e-12));
}

#[test]
fn evaluation_reports_one_row_per_image() {
    let data = pairs(3, 16, 2);
    let model = GtfmnModel::<f32>::new(GtfmnConfig::new(2, 8, 1), 0).unwrap();
    let opts = EvalOptions::for_scale(2);
    let trained = evaluate_model(&model, &data, opts, "untrained").unwrap();
    let bicubic = bicubic_baseline(&data, opts, "bicubic").unwrap();
    assert_eq!(trained.rows.len(), 3);
    assert_eq!(bicubic.rows.len(), 3);
    assert_eq!(opts.border_crop, 2);
    // random weights produce noise, well below the plain upscaler
    assert!(trained.mean.psnr < bicubic.mean.psnr, "{} vs {}", trained.mean.psnr, bicubic.mean.psnr);

    let parallel = EvalOptions { parallel: true, ..opts };
    assert_eq!(evaluate_model(&model, &data, parallel, "untrained").unwrap(), trained);

    let wrong = GtfmnModel::<f32>::new(GtfmnConfig::new(4, 8, 1), 0).unwrap();
    assert!(evaluate_model(&wrong, &data, opts, "x").is_err());
}

#[test]
fn trainer_rejects_mismatched_inputs() {
    assert!(Trainer::new(tiny_config(1), pairs(1, 16, 4), None).is_err());
    assert!(Trainer::new(TrainConfig { lr_patch: 20, ..tiny_config(1) }, pairs(1, 16, 2), None).is_err());
    assert!(Trainer::new(TrainConfig { lr: -1.0, ..tiny_config(1) }, pairs(1, 16, 2), None).is_err());
}

#[test]
fn loss_trends_down_on_a_single_image() {
    let cfg = TrainConfig {
        batch: 1,
        augment: false,
        lr: 2e-3,
        ..tiny_config(120)
    };
    let out = train_on_pairs(&cfg, pairs(1, 16, 2), &[], None).unwrap();
    let smooth = out.log.smoothed(30);
    assert_eq!(smooth.len(), 4);
    assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "{smooth:?}");
}

#[test]
fn target_loss_stops_early() {
    let cfg = TrainConfig { target_loss: Some(10.0), ..tiny_config(50) };
    let out = train_on_pairs(&cfg, pairs(1, 16, 2), &[], None).unwrap();
    assert_eq!(out.log.losses.len(), 1);
}

#[test]
fn config_round_trips_through_key_values() {
    let cfg = TrainConfig {
        border_crop: Some(3),
        lr_milestones: vec![100, 200],
        target_loss: Some(0.05),
        ..tiny_config(7)
    };
    let back = TrainConfig::from_key_values(&cfg.to_key_values()).unwrap();
    assert_eq!(back, cfg);
    let mut kv = cfg.to_key_values();
    kv.set("no_such_key", 1);
    assert!(TrainConfig::from_key_values(&kv).is_err());
}
