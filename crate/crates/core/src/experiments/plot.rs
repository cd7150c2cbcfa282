use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;

use super::plan::{ResultsTable, TableRow};
use crate::metrics::MeanStd;
use crate::{Error, Result};

const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a system TrueType font under "sans-serif" once. Returns false
/// when none is found; plots are then drawn without text.
/// `DCCYCLE_FONT` names a font file to try first.
pub fn fonts_available() -> bool {
    static LOADED: OnceLock<bool> = OnceLock::new();
    *LOADED.get_or_init(|| {
        let mut paths: Vec<PathBuf> = std::env::var_os("DCCYCLE_FONT").map(PathBuf::from).into_iter().collect();
        paths.extend(FONT_CANDIDATES.iter().map(PathBuf::from));
        for p in paths {
            if let Ok(bytes) = std::fs::read(&p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; plots will have no text");
        false
    })
}

/// A metric-vs-beta line chart description.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlot {
    pub path: PathBuf,
    pub metric: &'static str,
    pub x_label: &'static str,
    /// `(label, [(beta, value)])`.
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

fn points(t: &ResultsTable, pick: fn(&TableRow) -> Option<MeanStd>) -> Vec<(f64, f64)> {
    t.rows
        .iter()
        .filter_map(|r| pick(r).map(|m| (r.beta, m.mean)))
        .filter(|(_, v)| v.is_finite())
        .collect()
}

/// MAE, PSNR and SSIM against beta, with one `a2b` and one `b2a` series
/// each. Writes `sweep_mae.png`, `sweep_psnr.png`, `sweep_ssim.png`.
pub fn sweep_plots(a2b: &ResultsTable, b2a: &ResultsTable, out: &Path) -> Result<Vec<SweepPlot>> {
    let metrics: [(&'static str, fn(&TableRow) -> Option<MeanStd>); 3] =
        [("MAE", |r| r.mae), ("PSNR", |r| r.psnr), ("SSIM", |r| r.ssim)];
    let mut plots = Vec::new();
    for (metric, pick) in metrics {
        let plot = SweepPlot {
            path: out.join(format!("sweep_{}.png", metric.to_lowercase())),
            metric,
            x_label: "β",
            series: vec![("a2b".into(), points(a2b, pick)), ("b2a".into(), points(b2a, pick))],
        };
        draw(&plot)?;
        plots.push(plot);
    }
    Ok(plots)
}

fn bounds(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-3 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

pub fn draw(plot: &SweepPlot) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", plot.path.display()));
    if let Some(d) = plot.path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let text = fonts_available();
    let xs = plot.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let ys = plot.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let root = BitMapBackend::new(&plot.path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder
            .caption(format!("{} vs β", plot.metric), ("sans-serif", 24))
            .x_label_area_size(45)
            .y_label_area_size(60);
    }
    let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(|e| plot_err(&e))?;
    if text {
        chart
            .configure_mesh()
            .x_desc(plot.x_label)
            .y_desc(plot.metric)
            .draw()
            .map_err(|e| plot_err(&e))?;
    }
    let colours = [RGBColor(31, 119, 180), RGBColor(214, 39, 40)];
    for (i, (label, pts)) in plot.series.iter().enumerate() {
        let colour = colours[i % colours.len()];
        let series = chart
            .draw_series(LineSeries::new(pts.iter().copied(), colour.stroke_width(2)))
            .map_err(|e| plot_err(&e))?;
        if text {
            series
                .label(label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], colour.stroke_width(2)));
        }
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, colour.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
    }
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
