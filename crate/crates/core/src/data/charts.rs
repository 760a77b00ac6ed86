//! Procedural HR test charts, used as a stand-in corpus when no natural
//! image set is available.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use gtfmn_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::save_rgb;
use crate::error::{io_err, Result};

const KINDS: usize = 5;

/// Chart `index` of a seeded family, 3×`height`×`width` in [0, 1].
pub fn test_chart(index: usize, height: usize, width: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut color = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let (c0, c1) = (color(), color());
    let plane = height * width;
    let mut data = vec![0f32; 3 * plane];
    let mut put = |y: usize, x: usize, t: f64, base: [f64; 3], alt: [f64; 3]| {
        for c in 0..3 {
            let v = base[c] * (1.0 - t) + alt[c] * t;
            data[c * plane + y * width + x] = v.clamp(0.0, 1.0) as f32;
        }
    };
    let (hf, wf) = (height as f64, width as f64);
    match index % KINDS {
        0 => {
            let freq = rng.gen_range(3.0..9.0);
            let angle = rng.gen_range(0.0..PI);
            for y in 0..height {
                for x in 0..width {
                    let (u, v) = (x as f64 / wf, y as f64 / hf);
                    let along = u * angle.cos() + v * angle.sin();
                    let t = 0.5 * u + 0.25 * (1.0 + (2.0 * PI * freq * along).sin());
                    put(y, x, t, c0, c1);
                }
            }
        }
        1 => {
            let cell = rng.gen_range(3..9usize);
            for y in 0..height {
                for x in 0..width {
                    let t = ((y / cell + x / cell) % 2) as f64;
                    put(y, x, t, c0, c1);
                }
            }
        }
        2 => {
            let k = rng.gen_range(0.5..1.5) * PI / wf.max(hf);
            let (cy, cx) = (hf * rng.gen_range(0.3..0.7), wf * rng.gen_range(0.3..0.7));
            for y in 0..height {
                for x in 0..width {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    put(y, x, 0.5 + 0.5 * (k * r2 / 4.0).cos(), c0, c1);
                }
            }
        }
        3 => {
            let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.gen_range(6..14))
                .map(|_| {
                    (
                        rng.gen_range(0.0..hf),
                        rng.gen_range(0.0..wf),
                        rng.gen_range(3.0..hf.min(wf) / 3.0 + 4.0),
                        [rng.gen(), rng.gen(), rng.gen()],
                    )
                })
                .collect();
            for y in 0..height {
                for x in 0..width {
                    let mut col = c0;
                    for &(dy, dx, r, dc) in &discs {
                        if (y as f64 - dy).powi(2) + (x as f64 - dx).powi(2) <= r * r {
                            col = dc;
                        }
                    }
                    put(y, x, 0.0, col, col);
                }
            }
        }
        _ => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..8)
                .map(|_| {
                    (
                        rng.gen_range(-12.0..12.0),
                        rng.gen_range(-12.0..12.0),
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.2..1.0),
                    )
                })
                .collect();
            let norm: f64 = waves.iter().map(|w| w.3).sum();
            for y in 0..height {
                for x in 0..width {
                    let (u, v) = (x as f64 / wf, y as f64 / hf);
                    let s: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph, a)| a * (2.0 * PI * (fx * u + fy * v) + ph).sin())
                        .sum();
                    put(y, x, 0.5 + 0.5 * s / norm, c0, c1);
                }
            }
        }
    }
    Tensor::from_vec(&[3, height, width], data).expect("length matches")
}

/// Writes `count` charts as `chart_000.png`, ... into `dir`.
pub fn write_charts(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("chart_{i:03}.png"));
            save_rgb(&path, &test_chart(i, height, width, seed))?;
            Ok(path)
        })
        .collect()
}
