//! Independent scalar-loop oracles and small fixtures shared by the
//! integration tests. Nothing here calls into the code under test for the
//! quantity it checks.
#![allow(dead_code)]

use dccycle::autograd::DType;
use std::path::Path;

use dccycle::data::{toy_dataset, ToyParams, UnpairedDataset};
use dccycle::experiments::{Preset, RunConfig};
use dccycle::losses::{LossConfig, LossFamily};
use dccycle::metrics::SsimParams;
use dccycle::model::{DiscriminatorSpec, GeneratorSpec, OutputActivation};
use dccycle::trainer::TrainConfig;
use dccycle::{Image, ValueRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, size: usize, range: ValueRange) -> Image {
    let (lo, hi) = range.bounds();
    let data = (0..size * size).map(|_| rng.random_range(lo..=hi)).collect();
    Image::new(size, size, data, range).unwrap()
}

/// Smooth structured image in metric space: a few sinusoids.
pub fn structured_image(size: usize, phase: f64) -> Image {
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (u, v) = (i as f64 / size as f64, j as f64 / size as f64);
            let s = (6.0 * u + phase).sin() * (4.0 * v - phase).cos();
            data.push(0.5 + 0.4 * s);
        }
    }
    Image::new(size, size, data, ValueRange::Metric).unwrap()
}

pub fn ce_oracle(values: &[f64], target: f64) -> f64 {
    let eps = 1e-7;
    let mut acc = 0.0;
    for &v in values {
        let p = v.clamp(eps, 1.0 - eps);
        acc += target * p.ln() + (1.0 - target) * (1.0 - p).ln();
    }
    -acc / values.len() as f64
}

pub fn lsq_oracle(values: &[f64], target: f64) -> f64 {
    let mut acc = 0.0;
    for &v in values {
        acc += (v - target) * (v - target);
    }
    acc / values.len() as f64
}

pub fn mae_oracle(a: &Image, b: &Image) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            acc += (a.get(i, j) - b.get(i, j)).abs();
        }
    }
    acc / (a.height() * a.width()) as f64
}

pub fn mse_oracle(a: &Image, b: &Image) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            let d = a.get(i, j) - b.get(i, j);
            acc += d * d;
        }
    }
    acc / (a.height() * a.width()) as f64
}

pub fn psnr_oracle(a: &Image, b: &Image, l: f64) -> f64 {
    10.0 * (l / mse_oracle(a, b)).log10()
}

/// Two-pass windowed SSIM with its own Gaussian window.
pub fn ssim_oracle(a: &Image, b: &Image, p: &SsimParams) -> f64 {
    let n = p.window_size;
    let c = (n / 2) as f64;
    let mut w = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            w[i * n + j] = (-d2 / (2.0 * p.window_sigma * p.window_sigma)).exp();
            total += w[i * n + j];
        }
    }
    for v in &mut w {
        *v /= total;
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let (rows, cols) = (a.height() - n + 1, a.width() - n + 1);
    let mut sum = 0.0;
    for r in 0..rows {
        for s in 0..cols {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += w[i * n + j] * a.get(r + i, s + j);
                    mb += w[i * n + j] * b.get(r + i, s + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let da = a.get(r + i, s + j) - ma;
                    let db = b.get(r + i, s + j) - mb;
                    va += w[i * n + j] * da * da;
                    vb += w[i * n + j] * db * db;
                    cov += w[i * n + j] * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    sum / (rows * cols) as f64
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Small f64 configuration that trains in milliseconds per step.
pub fn tiny_config(size: usize, family: LossFamily, dual_contrast: bool, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        lr_decay: false,
        seed,
        loss: LossConfig::new(family, dual_contrast),
        generator: GeneratorSpec::new(size, 4, 1, 2),
        discriminator: DiscriminatorSpec::new(size, 4, 2, OutputActivation::Sigmoid),
        precision: DType::F64,
        ..TrainConfig::default()
    }
}

pub fn tiny_data(n: usize, size: usize) -> UnpairedDataset {
    toy_dataset(&ToyParams {
        n,
        size,
        seed: 7,
        gamma: 1.5,
    })
    .unwrap()
}

/// Toy preset shrunk to 16px, six pairs and one f64 epoch, writing under `out`.
pub fn tiny_run_config(out: &Path, extra: &[&str]) -> RunConfig {
    let mut overrides: Vec<String> = [
        "image_size=16",
        "toy_n=6",
        "gen_base_channels=4",
        "gen_residual_blocks=1",
        "gen_downsample_stages=2",
        "disc_base_channels=4",
        "disc_downsample_stages=2",
        "epochs=1",
        "precision=f64",
        "emit_figures=false",
        "name=tiny",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    overrides.push(format!("out_dir={}", out.display()));
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::resolve(None, Preset::Toy, &overrides).unwrap()
}
