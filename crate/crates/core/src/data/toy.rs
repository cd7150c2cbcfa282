use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{export_png, normalize_pixels, write_manifest, ManifestEntry};
use super::{Domain, Sample, UnpairedDataset};
use crate::{Image, Result, ValueRange};

/// Synthetic two-modality corpus: X holds soft overlapping ellipses, Y is
/// the same field inverted and gamma-adjusted, `(1 - x)^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub gamma: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            n: 50,
            size: 64,
            seed: 0,
            gamma: 1.5,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn ellipse_field<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let s = size as f64;
    let background = rng.random_range(0.05..0.2);
    let count = rng.random_range(2..=4);
    let blobs: Vec<[f64; 7]> = (0..count)
        .map(|_| {
            [
                rng.random_range(0.2..0.8) * s,
                rng.random_range(0.2..0.8) * s,
                rng.random_range(0.12..0.35) * s,
                rng.random_range(0.12..0.35) * s,
                rng.random_range(0.0..PI),
                rng.random_range(0.25..0.6),
                rng.random_range(0.08..0.2),
            ]
        })
        .collect();
    let mut field = vec![background; size * size];
    for (idx, v) in field.iter_mut().enumerate() {
        let (r, c) = ((idx / size) as f64 + 0.5, (idx % size) as f64 + 0.5);
        for &[cx, cy, rx, ry, theta, amp, soft] in &blobs {
            let (dx, dy) = (c - cx, r - cy);
            let u = dx * theta.cos() + dy * theta.sin();
            let w = -dx * theta.sin() + dy * theta.cos();
            let d = ((u / rx).powi(2) + (w / ry).powi(2)).sqrt();
            *v += amp * sigmoid((1.0 - d) / soft);
        }
        *v = v.clamp(0.0, 1.0);
    }
    field
}

fn quantize(values: &[f64]) -> Vec<u16> {
    values.iter().map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u16).collect()
}

/// One aligned pair in model space, quantized to 8 bits so that in-memory
/// data equals what a PNG round trip would give.
pub fn toy_pair<R: Rng>(rng: &mut R, size: usize, gamma: f64) -> Result<(Image, Image)> {
    let x = ellipse_field(rng, size);
    let y: Vec<f64> = x.iter().map(|v| (1.0 - v).powf(gamma)).collect();
    let to_image = |v: &[f64]| Image::new(size, size, normalize_pixels(&quantize(v), 255), ValueRange::Model);
    Ok((to_image(&x)?, to_image(&y)?))
}

fn toy_id(i: usize) -> String {
    format!("toy_{i:03}")
}

pub fn toy_dataset(params: &ToyParams) -> Result<UnpairedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut xs = Vec::with_capacity(params.n);
    let mut ys = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let (x, y) = toy_pair(&mut rng, params.size, params.gamma)?;
        let id = toy_id(i);
        xs.push(Sample {
            id: id.clone(),
            domain: Domain::X,
            pair_id: Some(id.clone()),
            image: x,
        });
        ys.push(Sample {
            id: id.clone(),
            domain: Domain::Y,
            pair_id: Some(id),
            image: y,
        });
    }
    UnpairedDataset::new(xs, ys)
}

/// Writes `x/<id>.png`, `y/<id>.png` and `manifest.csv` under `out`.
pub fn make_toy_data(out: &Path, params: &ToyParams) -> Result<Vec<ManifestEntry>> {
    let data = toy_dataset(params)?;
    let mut entries = Vec::new();
    for domain in [Domain::X, Domain::Y] {
        for s in data.pool(domain) {
            let file = format!("{domain}/{}.png", s.id);
            export_png(&s.image, &out.join(&file))?;
            entries.push(ManifestEntry {
                file,
                domain,
                pair_id: s.pair_id.clone(),
            });
        }
    }
    write_manifest(&out.join("manifest.csv"), &entries)?;
    Ok(entries)
}
