use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use super::{Domain, Sample, UnpairedDataset};
use crate::{Error, Image, Result, ValueRange};

/// Linear map of stored integers `0..=max` onto `[-1, 1]`.
pub fn normalize_pixels(pixels: &[u16], max: u16) -> Vec<f64> {
    pixels.iter().map(|&p| 2.0 * (p as f64 / max as f64) - 1.0).collect()
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f64], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if height == out_h && width == out_w {
        return src.to_vec();
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1, fr) = coord(i, height, out_h);
        for j in 0..out_w {
            let (c0, c1, fc) = coord(j, width, out_w);
            let top = src[r0 * width + c0] * (1.0 - fc) + src[r0 * width + c1] * fc;
            let bottom = src[r1 * width + c0] * (1.0 - fc) + src[r1 * width + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Decodes an 8- or 16-bit grayscale PNG into a model-space image of
/// `target x target` pixels.
pub fn read_png(path: &Path, target: usize) -> Result<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let values = match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let px: Vec<u16> = buf.into_raw().into_iter().map(u16::from).collect();
            normalize_pixels(&px, u8::MAX as u16)
        }
        DynamicImage::ImageLuma16(buf) => normalize_pixels(&buf.into_raw(), u16::MAX),
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("expected 8- or 16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    let data = resize_bilinear(&values, h, w, target, target)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Image::new(target, target, data, ValueRange::Model).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes an image as 8-bit grayscale: metric-space value times 255,
/// rounded half-up.
pub fn export_png(image: &Image, path: &Path) -> Result<()> {
    let metric = image.to_metric();
    let px: Vec<u8> = metric
        .data()
        .iter()
        .map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = GrayImage::from_raw(image.width() as u32, image.height() as u32, px).expect("buffer size");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `x/*.png` and `y/*.png`. Files sharing a stem across the two
/// directories are treated as a pair.
pub fn ingest_dirs(x_dir: &Path, y_dir: &Path, target: usize) -> Result<UnpairedDataset> {
    let xs = list_pngs(x_dir)?;
    let ys = list_pngs(y_dir)?;
    for (files, dir) in [(&xs, x_dir), (&ys, y_dir)] {
        if files.is_empty() {
            return Err(Error::Empty(format!("no PNG files in {}", dir.display())));
        }
    }
    let x_stems: std::collections::HashSet<String> = xs.iter().map(|p| stem(p)).collect();
    let y_stems: std::collections::HashSet<String> = ys.iter().map(|p| stem(p)).collect();
    let load = |files: &[PathBuf], domain: Domain, other: &std::collections::HashSet<String>| -> Result<Vec<Sample>> {
        files
            .iter()
            .map(|p| {
                let id = stem(p);
                Ok(Sample {
                    pair_id: other.contains(&id).then(|| id.clone()),
                    image: read_png(p, target)?,
                    domain,
                    id,
                })
            })
            .collect()
    };
    UnpairedDataset::new(load(&xs, Domain::X, &y_stems)?, load(&ys, Domain::Y, &x_stems)?)
}

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub domain: Domain,
    #[serde(default)]
    pub pair_id: Option<String>,
}

/// Loads images listed in a `file,domain,pair_id` manifest; relative paths
/// resolve against the manifest's directory.
pub fn ingest_manifest(manifest: &Path, target: usize) -> Result<UnpairedDataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| Error::Decode {
        path: manifest.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut pools: BTreeMap<Domain, Vec<Sample>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let domain: Domain = field(1).parse().map_err(|e: Error| Error::Decode {
            path: manifest.to_path_buf(),
            message: format!("row {}: {e}", line + 2),
        })?;
        let file = field(0);
        if file.is_empty() {
            return Err(Error::Decode {
                path: manifest.to_path_buf(),
                message: format!("row {}: empty file column", line + 2),
            });
        }
        let path = base.join(file);
        let pair = field(2);
        pools.entry(domain).or_default().push(Sample {
            id: stem(&path),
            domain,
            pair_id: (!pair.is_empty()).then(|| pair.to_string()),
            image: read_png(&path, target)?,
        });
    }
    let x = pools.remove(&Domain::X).unwrap_or_default();
    let y = pools.remove(&Domain::Y).unwrap_or_default();
    UnpairedDataset::new(x, y)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_record(["file", "domain", "pair_id"])?;
    for e in entries {
        w.write_record([e.file.as_str(), &e.domain.to_string(), e.pair_id.as_deref().unwrap_or("")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
