mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use gtfmn_core::checkpoint::load_checkpoint;
use gtfmn_core::data::{
    bicubic_resize, build_corpus, load_pairs, load_rgb, read_manifest, save_gray, save_rgb, side_by_side,
    write_charts, DegradationSpec,
};
use gtfmn_core::metrics::format_db;
use gtfmn_core::selftest::{run_selftest, SelftestOptions};
use gtfmn_core::trainer::{
    ablate_blocks, ablate_illumination, bicubic_baseline, evaluate_checkpoint, train, EvalOptions, TestSet,
    TrainConfig,
};
use gtfmn_core::{GtfmnError, Result};

use args::{AblationData, Cli, Command, EvalArgs, InferArgs, SynthArgs};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> GtfmnError {
    let context = context.into();
    move |source| GtfmnError::Io { context, source }
}

fn echo_config(cfg: &TrainConfig) {
    println!("# resolved configuration");
    print!("{}", cfg.to_key_values().to_text());
}

fn synth_data(a: &SynthArgs) -> Result<()> {
    let spec = DegradationSpec::new(a.gamma, a.scale);
    spec.validate()?;
    println!(
        "# synth-data scale={} gamma={} seed={} out_dir={}",
        a.scale,
        a.gamma,
        a.seed,
        a.out_dir.display()
    );
    let hr_dir = match &a.hr_dir {
        Some(d) => d.clone(),
        None => {
            let dir = a.out_dir.join("source");
            write_charts(&dir, a.charts, a.chart_size, a.chart_size, a.seed)?;
            dir
        }
    };
    let manifest = build_corpus(&hr_dir, &spec, &a.out_dir, a.seed)?;
    println!("{} pairs written to {}", manifest.len(), manifest.path.display());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<bool> {
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
    println!(
        "# infer checkpoint={} step={} emit_map={} side_by_side={}",
        a.checkpoint.display(),
        meta.step,
        a.emit_map,
        a.side_by_side
    );
    print!("{}", meta.config.to_key_values().to_text());
    fs::create_dir_all(&a.out_dir).map_err(io(format!("creating {}", a.out_dir.display())))?;
    let mut all_ok = true;
    for input in &a.inputs {
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let result = (|| -> Result<Vec<PathBuf>> {
            let lr = load_rgb::<f32>(input)?;
            let (sr, map) = model.infer(&lr.unsqueeze0())?;
            let mut written = vec![a.out_dir.join(format!("{stem}_sr.png"))];
            save_rgb(&written[0], &sr)?;
            if a.emit_map {
                let path = a.out_dir.join(format!("{stem}_map.png"));
                save_gray(&path, &map.values)?;
                written.push(path);
            }
            if a.side_by_side {
                let (h, w) = (sr.shape()[2], sr.shape()[3]);
                let up = bicubic_resize(&lr, h, w)?;
                let sr3 = sr.reshape(&[3, h, w])?;
                let path = a.out_dir.join(format!("{stem}_compare.png"));
                save_rgb(&path, &side_by_side(&up, &sr3)?)?;
                written.push(path);
            }
            Ok(written)
        })();
        match result {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", input.display());
                all_ok = false;
            }
        }
    }
    Ok(all_ok)
}

fn eval(a: &EvalArgs) -> Result<()> {
    println!(
        "# eval checkpoint={} manifest={} border_crop={} luma={}",
        a.checkpoint.display(),
        a.manifest.display(),
        a.border_crop.map_or("scale".into(), |b| b.to_string()),
        a.luma
    );
    let summary = evaluate_checkpoint(&a.checkpoint, &a.manifest, a.border_crop, a.luma, false)?;
    print!("{}", summary.to_text());
    let baseline = if a.baseline {
        let (_, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
        let pairs = load_pairs::<f32>(&read_manifest(&a.manifest)?, meta.config.scale)?;
        let opts = EvalOptions {
            border_crop: summary.mean.border_crop,
            luma: a.luma,
            parallel: false,
        };
        let b = bicubic_baseline(&pairs, opts, "bicubic")?;
        print!("{}", b.to_text());
        Some(b)
    } else {
        None
    };
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
        let write = |name: &str, body: String| {
            fs::write(dir.join(name), body).map_err(io(format!("writing {name}")))
        };
        write("report.txt", summary.to_text())?;
        write("report.csv", summary.to_csv())?;
        write("report.json", summary.to_json())?;
        if let Some(b) = baseline {
            write("baseline.txt", b.to_text())?;
            write("baseline.json", b.to_json())?;
        }
    }
    Ok(())
}

fn load_ablation_data(d: &AblationData, scale: usize) -> Result<(Vec<gtfmn_core::data::PairedSample<f32>>, Vec<TestSet>)> {
    let train = load_pairs(&read_manifest(&d.train_manifest)?, scale)?;
    let tests = d
        .test_manifests
        .iter()
        .map(|p| {
            Ok(TestSet {
                name: set_name(p),
                pairs: load_pairs(&read_manifest(p)?, scale)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, tests))
}

fn set_name(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(Path::file_name)
        .or_else(|| manifest.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "test".into())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SynthData(a) => synth_data(&a)?,
        Command::Train(a) => {
            let cfg = a.flags.resolve()?;
            echo_config(&cfg);
            let outcome = train(&cfg, &a.train_manifest, a.eval_manifest.as_deref(), &a.run_dir)?;
            if let Some(l) = outcome.log.final_loss() {
                println!("final loss {l:.6} after {} steps", outcome.log.losses.len());
            }
            if let Some((_, s)) = outcome.log.evals.last() {
                println!("final eval psnr {} ssim {:.4}", format_db(s.mean.psnr), s.mean.ssim);
            }
            if let Some(p) = outcome.log.final_checkpoint {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Infer(a) => {
            if !infer(&a)? {
                return Ok(ExitCode::from(EXIT_RUNTIME));
            }
        }
        Command::Eval(a) => eval(&a)?,
        Command::AblateBlocks(a) => {
            let cfg = a.flags.resolve()?;
            let depths = if a.full_depths { vec![16, 32, 64] } else { a.depths.clone() };
            echo_config(&cfg);
            println!("depths = {depths:?}");
            let (train, tests) = load_ablation_data(&a.data, cfg.model.scale)?;
            let report = ablate_blocks(&cfg, &depths, &train, &tests, Some(&a.data.run_dir))?;
            print!("{}", report.to_text());
        }
        Command::AblateIllum(a) => {
            let cfg = a.flags.resolve()?;
            echo_config(&cfg);
            let (train, tests) = load_ablation_data(&a.data, cfg.model.scale)?;
            let report = ablate_illumination(&cfg, &train, &tests, Some(&a.data.run_dir))?;
            print!("{}", report.to_text());
        }
        Command::Selftest(a) => {
            let report = run_selftest(&SelftestOptions {
                epsilon: a.epsilon,
                full_model: !a.quick,
            });
            print!("{}", report.to_text());
            if !report.all_passed() {
                for f in report.failures() {
                    eprintln!("selftest failed: {}", f.name);
                }
                return Ok(ExitCode::from(EXIT_SELFTEST));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
