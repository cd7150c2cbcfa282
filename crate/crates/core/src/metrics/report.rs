use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sample mean and standard deviation (n - 1 denominator; zero when fewer
/// than two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("mean/std of an empty set".into()));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Ok(MeanStd { mean, std, n })
    }

    /// `mean (std)` with the given number of decimals.
    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*} ({:.*})", decimals, self.mean, decimals, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mae: MeanStd,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
}

/// Per-image metrics for one translation direction over a test split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        MetricReport { rows }
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        let col = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).collect::<Vec<_>>();
        Ok(MetricSummary {
            mae: MeanStd::of(&col(|r| r.mae))?,
            psnr: MeanStd::of(&col(|r| r.psnr))?,
            ssim: MeanStd::of(&col(|r| r.ssim))?,
        })
    }

    /// `id,mae,psnr,ssim` rows followed by `mean` and `std` footer rows.
    pub fn to_csv(&self) -> Result<String> {
        let summary = self.summary()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "mae", "psnr", "ssim"])?;
        for r in &self.rows {
            w.write_record([r.id.clone(), fmt(r.mae), fmt(r.psnr), fmt(r.ssim)])?;
        }
        let s = &summary;
        w.write_record(["mean".into(), fmt(s.mae.mean), fmt(s.psnr.mean), fmt(s.ssim.mean)])?;
        w.write_record(["std".into(), fmt(s.mae.std), fmt(s.psnr.std), fmt(s.ssim.std)])?;
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_csv()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses a report written by [`MetricReport::write_csv`], dropping the
    /// footer rows.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default().to_string();
            if id == "mean" || id == "std" {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Decode {
                        path: path.to_path_buf(),
                        message: format!("bad number in column {i} of row {id}"),
                    })
            };
            rows.push(MetricRow {
                mae: num(1)?,
                psnr: num(2)?,
                ssim: num(3)?,
                id,
            });
        }
        Ok(MetricReport { rows })
    }
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
