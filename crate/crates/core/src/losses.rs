//! Adversarial, cycle-consistency and dual-contrast terms, and their
//! composition into the generator and discriminator objectives.
//!
//! Every loss has a graph form (on [`Var`]s, used by the trainer) and a
//! value form (on [`Image`]s and [`PatchGrid`]s) built on the graph form.

use std::fmt;

use dccycle_autograd::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::TrainingBatch;
use crate::metrics::{ssim_var, SsimParams};
use crate::model::{Discriminator, Generator, OutputActivation, PatchGrid};
use crate::{Error, Image, Result};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    /// L1 cycle loss with least-squares adversarial terms.
    MaeMse,
    /// SSIM cycle loss with patch-wise cross-entropy adversarial terms.
    SsimCe,
}

impl LossFamily {
    pub fn label(self) -> &'static str {
        match self {
            LossFamily::MaeMse => "MAE&MSE",
            LossFamily::SsimCe => "SSIM&CE",
        }
    }

    /// Cross-entropy needs probabilities; least squares scores raw outputs.
    pub fn discriminator_activation(self) -> OutputActivation {
        match self {
            LossFamily::MaeMse => OutputActivation::Linear,
            LossFamily::SsimCe => OutputActivation::Sigmoid,
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossFamily::MaeMse => "mae_mse",
            LossFamily::SsimCe => "ssim_ce",
        })
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['&', '-'], "_").as_str() {
            "mae_mse" => Ok(LossFamily::MaeMse),
            "ssim_ce" => Ok(LossFamily::SsimCe),
            other => Err(Error::Config(format!(
                "unknown loss family `{other}` (expected mae_mse or ssim_ce)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub family: LossFamily,
    pub dual_contrast: bool,
    /// Cycle weight.
    pub lambda: f64,
    /// Dual-contrast weight.
    pub beta: f64,
    pub ssim: SsimParams,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            family: LossFamily::SsimCe,
            dual_contrast: true,
            lambda: 10.0,
            beta: 0.5,
            ssim: SsimParams::default(),
        }
    }
}

impl LossConfig {
    pub fn new(family: LossFamily, dual_contrast: bool) -> Self {
        LossConfig {
            family,
            dual_contrast,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        self.ssim.validate()
    }

    /// Ablation row label, e.g. `SSIM&CE(w)`.
    pub fn label(&self) -> String {
        format!("{}({})", self.family.label(), if self.dual_contrast { "w" } else { "wo" })
    }
}

/// Class a patch grid is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// Synthesized or source-domain image.
    Fake,
    Real,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Fake => 0.0,
            Label::Real => 1.0,
        }
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_g: f64,
    pub adv_f: f64,
    pub disc_x: f64,
    pub disc_y: f64,
    pub dc_x: f64,
    pub dc_y: f64,
    pub cycle: f64,
    pub total_generator: f64,
    pub total_discriminator_x: f64,
    pub total_discriminator_y: f64,
}

impl LossBreakdown {
    pub const COLUMNS: [&'static str; 10] = [
        "adv_G", "adv_F", "disc_X", "disc_Y", "dc_X", "dc_Y", "cycle", "total_G", "total_DX", "total_DY",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.adv_g,
            self.adv_f,
            self.disc_x,
            self.disc_y,
            self.dc_x,
            self.dc_y,
            self.cycle,
            self.total_generator,
            self.total_discriminator_x,
            self.total_discriminator_y,
        ]
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        LossBreakdown {
            adv_g: v[0],
            adv_f: v[1],
            disc_x: v[2],
            disc_y: v[3],
            dc_x: v[4],
            dc_y: v[5],
            cycle: v[6],
            total_generator: v[7],
            total_discriminator_x: v[8],
            total_discriminator_y: v[9],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in Self::COLUMNS.iter().zip(self.values()).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={v:.6}")?;
        }
        Ok(())
    }
}

// ---- graph forms ----

/// `-(1/N) sum [t log p + (1 - t) log(1 - p)]` over every patch of every
/// sample, with `p` clamped to `[eps, 1 - eps]`.
pub fn ce_patch_var<T: Real>(g: &mut Graph<T>, pred: Var, label: Label) -> Var {
    let p = g.clamp(pred, PROB_EPS, 1.0 - PROB_EPS);
    let p = match label {
        Label::Real => p,
        Label::Fake => g.affine(p, -1.0, 1.0),
    };
    let logs = g.log(p);
    let m = g.mean(logs);
    g.affine(m, -1.0, 0.0)
}

/// `mean((pred - t)^2)`.
pub fn lsq_patch_var<T: Real>(g: &mut Graph<T>, pred: Var, label: Label) -> Var {
    let d = g.affine(pred, 1.0, -label.target());
    let sq = g.square(d);
    g.mean(sq)
}

pub fn adversarial_var<T: Real>(g: &mut Graph<T>, pred: Var, label: Label, family: LossFamily) -> Var {
    match family {
        LossFamily::SsimCe => ce_patch_var(g, pred, label),
        LossFamily::MaeMse => lsq_patch_var(g, pred, label),
    }
}

fn check_same<T: Real>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::Shape(format!("{what}: {sa} vs {sb}")));
    }
    Ok(())
}

/// `mean|x_rec - x| + mean|y_rec - y|`.
pub fn cycle_mae_var<T: Real>(g: &mut Graph<T>, x: Var, x_rec: Var, y: Var, y_rec: Var) -> Result<Var> {
    check_same(g, x, x_rec, "cycle x")?;
    check_same(g, y, y_rec, "cycle y")?;
    let dx = g.sub(x_rec, x)?;
    let ax = g.abs(dx);
    let mx = g.mean(ax);
    let dy = g.sub(y_rec, y)?;
    let ay = g.abs(dy);
    let my = g.mean(ay);
    Ok(g.add(mx, my)?)
}

/// `(1 - SSIM(x_rec, x)) + (1 - SSIM(y_rec, y))` on model-space inputs,
/// remapped to `[0, 1]` first.
pub fn cycle_ssim_var<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    x_rec: Var,
    y: Var,
    y_rec: Var,
    params: &SsimParams,
) -> Result<Var> {
    check_same(g, x, x_rec, "cycle x")?;
    check_same(g, y, y_rec, "cycle y")?;
    let mut term = |a: Var, b: Var| -> Result<Var> {
        let a = g.affine(a, 0.5, 0.5);
        let b = g.affine(b, 0.5, 0.5);
        ssim_var(g, a, b, params)
    };
    let sx = term(x_rec, x)?;
    let sy = term(y_rec, y)?;
    let both = g.add(sx, sy)?;
    Ok(g.affine(both, -1.0, 2.0))
}

pub fn cycle_var<T: Real>(g: &mut Graph<T>, x: Var, x_rec: Var, y: Var, y_rec: Var, cfg: &LossConfig) -> Result<Var> {
    match cfg.family {
        LossFamily::MaeMse => cycle_mae_var(g, x, x_rec, y, y_rec),
        LossFamily::SsimCe => cycle_ssim_var(g, x, x_rec, y, y_rec, &cfg.ssim),
    }
}

/// Generator-side graph for one batch: G and F trainable, both
/// discriminators frozen.
pub struct GeneratorPass<T> {
    pub graph: Graph<T>,
    pub params_g: Vec<Var>,
    pub params_f: Vec<Var>,
    pub fake_y: Var,
    pub fake_x: Var,
    pub adv_g: Var,
    pub adv_f: Var,
    pub cycle: Var,
    pub total: Var,
}

impl<T: Real> GeneratorPass<T> {
    pub fn build(
        gen_g: &Generator<T>,
        gen_f: &Generator<T>,
        disc_x: &Discriminator<T>,
        disc_y: &Discriminator<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut graph = Graph::new();
        let g = &mut graph;
        let bg = gen_g.bind(g, true);
        let bf = gen_f.bind(g, true);
        let bdx = disc_x.bind(g, false);
        let bdy = disc_y.bind(g, false);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let fake_y = bg.apply(g, xv)?;
        let rec_x = bf.apply(g, fake_y)?;
        let fake_x = bf.apply(g, yv)?;
        let rec_y = bg.apply(g, fake_x)?;
        let score_y = bdy.apply(g, fake_y)?;
        let adv_g = adversarial_var(g, score_y, Label::Real, cfg.family);
        let score_x = bdx.apply(g, fake_x)?;
        let adv_f = adversarial_var(g, score_x, Label::Real, cfg.family);
        let cycle = cycle_var(g, xv, rec_x, yv, rec_y, cfg)?;
        let adv = g.add(adv_g, adv_f)?;
        let weighted = g.affine(cycle, cfg.lambda, 0.0);
        let total = g.add(adv, weighted)?;
        let (params_g, params_f) = (bg.params().to_vec(), bf.params().to_vec());
        Ok(GeneratorPass {
            graph,
            params_g,
            params_f,
            fake_y,
            fake_x,
            adv_g,
            adv_f,
            cycle,
            total,
        })
    }

    pub fn value(&self, v: Var) -> f64 {
        self.graph.value(v).item().to_f64_lossy()
    }
}

/// One discriminator's terms: real vs fake, and the negatives term.
#[derive(Debug, Clone, Copy)]
pub struct DiscTerms {
    pub disc: Var,
    pub dc: Option<Var>,
    pub total: Var,
}

/// Builds `loss(real, 1) + loss(fake, 0) [+ beta * loss(negatives, 0)]`
/// for one discriminator. `fake` must not require gradients. The negatives
/// term is always computed when negatives are given so it can be logged,
/// but only enters the total under dual contrast.
pub fn discriminator_terms<T: Real>(
    g: &mut Graph<T>,
    disc: &crate::model::Bound<'_, T>,
    real: Var,
    fake: Var,
    negatives: Option<Var>,
    cfg: &LossConfig,
) -> Result<DiscTerms> {
    if g.requires_grad(fake) {
        return Err(Error::Config(
            "discriminator loss given a fake that still carries generator gradients; detach it".into(),
        ));
    }
    if cfg.dual_contrast && negatives.is_none() {
        return Err(Error::Config("dual_contrast is on but no negatives were supplied".into()));
    }
    let sr = disc.apply(g, real)?;
    let lr = adversarial_var(g, sr, Label::Real, cfg.family);
    let sf = disc.apply(g, fake)?;
    let lf = adversarial_var(g, sf, Label::Fake, cfg.family);
    let base = g.add(lr, lf)?;
    let dc = match negatives {
        Some(n) => {
            let sn = disc.apply(g, n)?;
            Some(adversarial_var(g, sn, Label::Fake, cfg.family))
        }
        None => None,
    };
    let total = match (cfg.dual_contrast, dc) {
        (true, Some(d)) => {
            let w = g.affine(d, cfg.beta, 0.0);
            g.add(base, w)?
        }
        _ => base,
    };
    Ok(DiscTerms { disc: base, dc, total })
}

/// Discriminator-side graph: D_X and D_Y trainable, fakes as constants.
pub struct DiscriminatorPass<T> {
    pub graph: Graph<T>,
    pub params_x: Vec<Var>,
    pub params_y: Vec<Var>,
    pub x: DiscTerms,
    pub y: DiscTerms,
    /// `total_DX + total_DY`; the parameter sets are disjoint so one
    /// backward gives each network its own gradient.
    pub total: Var,
}

impl<T: Real> DiscriminatorPass<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        disc_x: &Discriminator<T>,
        disc_y: &Discriminator<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        fake_x: &Tensor<T>,
        fake_y: &Tensor<T>,
        x_neg: Option<&Tensor<T>>,
        y_neg: Option<&Tensor<T>>,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut graph = Graph::new();
        let g = &mut graph;
        let bdx = disc_x.bind(g, true);
        let bdy = disc_y.bind(g, true);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let fxv = g.constant(fake_x.clone());
        let fyv = g.constant(fake_y.clone());
        // D_X sees y' as its negative, D_Y sees x'
        let ynv = y_neg.map(|t| g.constant(t.clone()));
        let xnv = x_neg.map(|t| g.constant(t.clone()));
        let tx = discriminator_terms(g, &bdx, xv, fxv, ynv, cfg)?;
        let ty = discriminator_terms(g, &bdy, yv, fyv, xnv, cfg)?;
        let total = g.add(tx.total, ty.total)?;
        let (params_x, params_y) = (bdx.params().to_vec(), bdy.params().to_vec());
        Ok(DiscriminatorPass {
            graph,
            params_x,
            params_y,
            x: tx,
            y: ty,
            total,
        })
    }

    pub fn value(&self, v: Var) -> f64 {
        self.graph.value(v).item().to_f64_lossy()
    }
}

/// Evaluates the full objective on one batch without updating anything.
pub fn total_objective<T: Real>(
    gen_g: &Generator<T>,
    gen_f: &Generator<T>,
    disc_x: &Discriminator<T>,
    disc_y: &Discriminator<T>,
    batch: &TrainingBatch,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let t = |s: &[crate::data::Sample]| Image::batch_tensor::<T>(&TrainingBatch::images(s));
    let (x, y, xn, yn) = (t(&batch.x)?, t(&batch.y)?, t(&batch.x_neg)?, t(&batch.y_neg)?);
    let gp = GeneratorPass::build(gen_g, gen_f, disc_x, disc_y, &x, &y, cfg)?;
    let fake_x = gp.graph.value(gp.fake_x).clone();
    let fake_y = gp.graph.value(gp.fake_y).clone();
    let dp = DiscriminatorPass::build(disc_x, disc_y, &x, &y, &fake_x, &fake_y, Some(&xn), Some(&yn), cfg)?;
    Ok(breakdown(&gp, &dp))
}

pub fn breakdown<T: Real>(gp: &GeneratorPass<T>, dp: &DiscriminatorPass<T>) -> LossBreakdown {
    let opt = |v: Option<Var>| v.map(|v| dp.value(v)).unwrap_or(0.0);
    LossBreakdown {
        adv_g: gp.value(gp.adv_g),
        adv_f: gp.value(gp.adv_f),
        disc_x: dp.value(dp.x.disc),
        disc_y: dp.value(dp.y.disc),
        dc_x: opt(dp.x.dc),
        dc_y: opt(dp.y.dc),
        cycle: gp.value(gp.cycle),
        total_generator: gp.value(gp.total),
        total_discriminator_x: dp.value(dp.x.total),
        total_discriminator_y: dp.value(dp.y.total),
    }
}

// ---- value forms ----

/// Something that turns an image into a patch grid.
pub trait PatchScorer {
    fn score(&self, image: &Image) -> Result<PatchGrid>;
}

impl<T: Real> PatchScorer for Discriminator<T> {
    fn score(&self, image: &Image) -> Result<PatchGrid> {
        Discriminator::score(self, image)
    }
}

fn grid_loss(grid: &PatchGrid, label: Label, family: LossFamily) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("patch grid".into()));
    }
    let mut g = Graph::<f64>::new();
    let v = g.constant(grid.to_tensor());
    let l = adversarial_var(&mut g, v, label, family);
    Ok(g.value(l).item())
}

/// Patch-wise cross-entropy of a grid against one label.
pub fn ce_patch_loss(grid: &PatchGrid, label: Label) -> Result<f64> {
    grid_loss(grid, label, LossFamily::SsimCe)
}

/// Mean squared deviation of a grid from the label value.
pub fn lsq_patch_loss(grid: &PatchGrid, label: Label) -> Result<f64> {
    grid_loss(grid, label, LossFamily::MaeMse)
}

fn mean_over(disc: &dyn PatchScorer, images: &[Image], label: Label, family: LossFamily) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("image batch".into()));
    }
    let mut total = 0.0;
    for im in images {
        total += grid_loss(&disc.score(im)?, label, family)?;
    }
    Ok(total / images.len() as f64)
}

/// Negatives scored as class 0, averaged over the batch.
pub fn dc_loss(disc: &dyn PatchScorer, negatives: &[Image], family: LossFamily) -> Result<f64> {
    mean_over(disc, negatives, Label::Fake, family)
}

/// Non-saturating generator term: the fake scored as class 1.
pub fn adversarial_generator_loss(disc: &dyn PatchScorer, fake: &Image, family: LossFamily) -> Result<f64> {
    grid_loss(&disc.score(fake)?, Label::Real, family)
}

pub fn discriminator_loss(
    disc: &dyn PatchScorer,
    real: &Image,
    fake: &Image,
    negatives: Option<&[Image]>,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let base = grid_loss(&disc.score(real)?, Label::Real, cfg.family)?
        + grid_loss(&disc.score(fake)?, Label::Fake, cfg.family)?;
    if !cfg.dual_contrast {
        return Ok(base);
    }
    let negatives = negatives.ok_or_else(|| Error::Config("dual_contrast is on but no negatives were supplied".into()))?;
    Ok(base + cfg.beta * dc_loss(disc, negatives, cfg.family)?)
}

fn tensor_pair(a: &Image, b: &Image, to_model: bool) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if !a.same_shape(b) || a.range() != b.range() {
        return Err(Error::Shape(format!(
            "{}x{} {:?} vs {}x{} {:?}",
            a.height(),
            a.width(),
            a.range(),
            b.height(),
            b.width(),
            b.range()
        )));
    }
    if to_model {
        Ok((a.to_model().to_tensor(), b.to_model().to_tensor()))
    } else {
        Ok((a.to_tensor(), b.to_tensor()))
    }
}

fn cycle_value(x: &Image, x_rec: &Image, y: &Image, y_rec: &Image, family: LossFamily, params: &SsimParams) -> Result<f64> {
    let ssim = family == LossFamily::SsimCe;
    let (xt, xrt) = tensor_pair(x, x_rec, ssim)?;
    let (yt, yrt) = tensor_pair(y, y_rec, ssim)?;
    let mut g = Graph::<f64>::new();
    let (xv, xrv, yv, yrv) = (g.constant(xt), g.constant(xrt), g.constant(yt), g.constant(yrt));
    let l = match family {
        LossFamily::MaeMse => cycle_mae_var(&mut g, xv, xrv, yv, yrv)?,
        LossFamily::SsimCe => cycle_ssim_var(&mut g, xv, xrv, yv, yrv, params)?,
    };
    Ok(g.value(l).item())
}

/// L1 cycle loss on the images as given; each pair must share a range.
pub fn cycle_loss_mae(x: &Image, x_rec: &Image, y: &Image, y_rec: &Image) -> Result<f64> {
    cycle_value(x, x_rec, y, y_rec, LossFamily::MaeMse, &SsimParams::default())
}

/// SSIM cycle loss, computed on the `[0, 1]` remap of each image.
pub fn cycle_loss_ssim(x: &Image, x_rec: &Image, y: &Image, y_rec: &Image, params: &SsimParams) -> Result<f64> {
    cycle_value(x, x_rec, y, y_rec, LossFamily::SsimCe, params)
}

/// Answers every image with the same grid.
#[derive(Debug, Clone)]
pub struct ConstantScorer(pub PatchGrid);

impl PatchScorer for ConstantScorer {
    fn score(&self, _image: &Image) -> Result<PatchGrid> {
        Ok(self.0.clone())
    }
}

