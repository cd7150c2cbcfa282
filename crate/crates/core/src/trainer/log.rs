use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::losses::LossBreakdown;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Generator updates completed, counting this one.
    pub step: u64,
    pub epoch: usize,
    pub losses: LossBreakdown,
}

pub fn log_header() -> Vec<&'static str> {
    let mut h = vec!["step", "epoch"];
    h.extend(LossBreakdown::COLUMNS);
    h
}

fn format_row(row: &LogRow) -> String {
    let mut s = format!("{},{}", row.step, row.epoch);
    for v in row.losses.values() {
        s.push(',');
        s.push_str(&format!("{v}"));
    }
    s
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != log_header() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("unexpected log header {}", header.join(",")),
        });
    }
    let bad = |line: usize| Error::Decode {
        path: path.to_path_buf(),
        message: format!("malformed log row {line}"),
    };
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let step = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad(i + 2))?;
        let epoch = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad(i + 2))?;
        let mut vals = [0.0; 10];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec.get(k + 2).and_then(|s| s.parse().ok()).ok_or_else(|| bad(i + 2))?;
        }
        rows.push(LogRow {
            step,
            epoch,
            losses: LossBreakdown::from_values(vals),
        });
    }
    Ok(rows)
}

/// Appends rows to `train.csv`, creating it with a header when new.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        writeln!(out, "{}", log_header().join(",")).map_err(|e| Error::io(path, e))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            out,
        })
    }

    /// Keeps rows up to and including `last_step`, then appends from there.
    pub fn resume(path: &Path, last_step: u64) -> Result<Self> {
        let keep: Vec<LogRow> = if path.exists() {
            read_log(path)?.into_iter().filter(|r| r.step <= last_step).collect()
        } else {
            Vec::new()
        };
        let mut w = Self::create(path)?;
        for r in &keep {
            w.push(r)?;
        }
        let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        w.flush()?;
        w.out = BufWriter::new(f);
        Ok(w)
    }

    pub fn push(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.out, "{}", format_row(row)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
