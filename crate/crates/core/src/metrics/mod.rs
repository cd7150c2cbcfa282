//! Image-quality metrics on metric-space (`[0, 1]`) images.

mod report;
mod ssim;

pub use report::{MeanStd, MetricReport, MetricRow, MetricSummary};
pub use ssim::{ssim, ssim_components, ssim_var, SsimComponents, SsimParams};

use crate::{Error, Image, Result, ValueRange};

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.range() != ValueRange::Metric || b.range() != ValueRange::Metric {
        return Err(Error::Config(
            "metrics expect metric-space images; call Image::to_metric first".into(),
        ));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.data().len() as f64)
}

/// Mean squared error.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(total / a.data().len() as f64)
}

/// `10 log10(L / MSE)` with `L` the dynamic range as given (not squared).
/// Identical images yield `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, dynamic_range: f64) -> Result<f64> {
    if !(dynamic_range > 0.0) {
        return Err(Error::Config(format!(
            "psnr dynamic range must be positive, got {dynamic_range}"
        )));
    }
    Ok(psnr_from_mse(mse(a, b)?, dynamic_range))
}

pub fn psnr_from_mse(mse: f64, dynamic_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (dynamic_range / mse).log10()
    }
}

/// Per-pixel `|real - synth|`.
pub fn error_map(real: &Image, synth: &Image) -> Result<Image> {
    check_pair(real, synth)?;
    let data = real.data().iter().zip(synth.data()).map(|(a, b)| (a - b).abs()).collect();
    Image::new(real.height(), real.width(), data, ValueRange::Metric)
}
