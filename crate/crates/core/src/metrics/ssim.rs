use dccycle_autograd::{Graph, Real, Shape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Result};

use super::check_pair;

/// Gaussian-window SSIM constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim window size must be odd, got {}",
                self.window_size
            )));
        }
        if !(self.window_sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(Error::Config("ssim sigma and dynamic range must be positive".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("ssim k1 and k2 must be positive".into()));
        }
        Ok(())
    }

    /// Row-major `window_size^2` weights: outer product of a normalized 1-D
    /// Gaussian with itself, so the weights sum to one.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_size;
        let centre = (n / 2) as f64;
        let g: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * self.window_sigma.powi(2))).exp())
            .collect();
        let total: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / total).collect();
        let mut w = Vec::with_capacity(n * n);
        for a in &g {
            for b in &g {
                w.push(a * b);
            }
        }
        w
    }

    fn window_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.window_size;
        let data = self.window().into_iter().map(T::from_f64_lossy).collect();
        Tensor::from_vec(Shape::new(1, 1, n, n), data).expect("window shape")
    }
}

/// Mean SSIM over all valid window positions of every sample, as a
/// differentiable graph node. Inputs are `[N, 1, H, W]` in `[0, 1]`.
pub fn ssim_var<T: Real>(g: &mut Graph<T>, a: Var, b: Var, params: &SsimParams) -> Result<Var> {
    params.validate()?;
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::Shape(format!("ssim inputs {sa} and {sb} differ")));
    }
    if sa.c != 1 {
        return Err(Error::Shape(format!("ssim expects single-channel input, got {sa}")));
    }
    if sa.h < params.window_size || sa.w < params.window_size {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the {}x{} ssim window",
            sa.h, sa.w, params.window_size, params.window_size
        )));
    }
    let (c1, c2) = (params.c1(), params.c2());
    let w = g.constant(params.window_tensor());
    let mu_a = g.conv2d(a, w, None, 1, 0)?;
    let mu_b = g.conv2d(b, w, None, 1, 0)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.conv2d(aa, w, None, 1, 0)?;
    let e_bb = g.conv2d(bb, w, None, 1, 0)?;
    let e_ab = g.conv2d(ab, w, None, 1, 0)?;
    let mu_aa = g.square(mu_a);
    let mu_bb = g.square(mu_b);
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let lum_num = g.affine(mu_ab, 2.0, c1);
    let cs_num = g.affine(cov, 2.0, c2);
    let mu_sq = g.add(mu_aa, mu_bb)?;
    let lum_den = g.affine(mu_sq, 1.0, c1);
    let var_sum = g.add(var_a, var_b)?;
    let cs_den = g.affine(var_sum, 1.0, c2);
    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// SSIM of two metric-space images, averaged over valid window positions.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    let mut g = Graph::<f64>::new();
    let (va, vb) = (g.constant(a.to_tensor()), g.constant(b.to_tensor()));
    let s = ssim_var(&mut g, va, vb, params)?;
    Ok(g.value(s).item())
}

/// Per-window luminance, contrast and structure maps alongside the
/// combined index, each `rows x cols` over the valid window positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimComponents {
    pub rows: usize,
    pub cols: usize,
    pub luminance: Vec<f64>,
    pub contrast: Vec<f64>,
    pub structure: Vec<f64>,
    /// Combined form with `c3 = c2 / 2` folded in.
    pub index: Vec<f64>,
}

impl SsimComponents {
    pub fn mean_index(&self) -> f64 {
        self.index.iter().sum::<f64>() / self.index.len() as f64
    }

    pub fn mean_product(&self) -> f64 {
        let total: f64 = self
            .luminance
            .iter()
            .zip(&self.contrast)
            .zip(&self.structure)
            .map(|((l, c), s)| l * c * s)
            .sum();
        total / self.index.len() as f64
    }
}

pub fn ssim_components(a: &Image, b: &Image, params: &SsimParams) -> Result<SsimComponents> {
    check_pair(a, b)?;
    params.validate()?;
    let n = params.window_size;
    let (h, w) = (a.height(), a.width());
    if h < n || w < n {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {n}x{n} ssim window"
        )));
    }
    let (c1, c2, c3) = (params.c1(), params.c2(), params.c3());
    let win = params.window();
    let (rows, cols) = (h - n + 1, w - n + 1);
    let mut out = SsimComponents {
        rows,
        cols,
        luminance: Vec::with_capacity(rows * cols),
        contrast: Vec::with_capacity(rows * cols),
        structure: Vec::with_capacity(rows * cols),
        index: Vec::with_capacity(rows * cols),
    };
    for i in 0..rows {
        for j in 0..cols {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..n {
                for dj in 0..n {
                    let wt = win[di * n + dj];
                    let (x, y) = (a.get(i + di, j + dj), b.get(i + di, j + dj));
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let (sd_a, sd_b) = (var_a.max(0.0).sqrt(), var_b.max(0.0).sqrt());
            out.luminance.push((2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1));
            out.contrast.push((2.0 * sd_a * sd_b + c2) / (var_a + var_b + c2));
            out.structure.push((cov + c3) / (sd_a * sd_b + c3));
            out.index.push(
                (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2)),
            );
        }
    }
    Ok(out)
}
