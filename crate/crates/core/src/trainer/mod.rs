//! Alternating optimization of the two generators and two discriminators,
//! checkpointing, resumption and evaluation.

mod config;
mod log;

pub use self::config::{Optimizer, TrainConfig};
pub use self::log::{log_header, read_log, LogRow, LogWriter};

use std::path::Path;

use dccycle_autograd::{Adam, DType, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, Split, TrainingBatch, UnpairedDataset};
use crate::losses::{breakdown, DiscriminatorPass, GeneratorPass, LossBreakdown};
use crate::metrics::{error_map, mae, psnr, ssim, MetricReport, MetricRow, SsimParams};
use crate::model::{
    build_discriminator, build_generator, derive_seed, peek_dtype, Checkpoint, Discriminator, Generator, Translator,
};
use crate::{Error, Image, Result, SOURCE_HASH};

const STREAM_G: u64 = 1;
const STREAM_F: u64 = 2;
const STREAM_DX: u64 = 3;
const STREAM_DY: u64 = 4;
const STREAM_BATCH: u64 = 5;

pub const CHECKPOINT_FILE: &str = "checkpoint";
pub const LOG_FILE: &str = "train.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    config_hash: String,
    source_hash: String,
    generator_updates: u64,
    discriminator_updates: u64,
    epoch: usize,
    rng_seed: u64,
    /// ChaCha word position, as a decimal string (u128).
    rng_word_pos: String,
    adam_gen: AdamMeta,
    adam_disc: AdamMeta,
    pool_x: usize,
    pool_y: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct AdamMeta {
    steps: u64,
    eps: f64,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub gen_g: Generator<T>,
    pub gen_f: Generator<T>,
    pub disc_x: Discriminator<T>,
    pub disc_y: Discriminator<T>,
    opt_gen: Adam<T>,
    opt_disc: Adam<T>,
    generator_updates: u64,
    discriminator_updates: u64,
    epoch: usize,
    rng_seed: u64,
    rng: ChaCha8Rng,
    pool_x: Vec<Tensor<T>>,
    pool_y: Vec<Tensor<T>>,
    config: TrainConfig,
}

impl<T: Real> TrainState<T> {
    /// Fresh networks and optimizers; every random stream derives from
    /// `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.precision != T::DTYPE {
            return Err(Error::Config(format!(
                "config asks for {} but the state is {}",
                config.precision,
                T::DTYPE
            )));
        }
        let seed = config.seed;
        let dspec = config.discriminator_spec();
        let gen_g = build_generator(config.generator, derive_seed(seed, STREAM_G))?;
        let gen_f = build_generator(config.generator, derive_seed(seed, STREAM_F))?;
        let disc_x = build_discriminator(dspec, derive_seed(seed, STREAM_DX))?;
        let disc_y = build_discriminator(dspec, derive_seed(seed, STREAM_DY))?;
        let (b1, b2) = config.adam_betas;
        let opt_gen = Adam::new(gen_params(&gen_g, &gen_f), b1, b2);
        let opt_disc = Adam::new(gen_params_d(&disc_x, &disc_y), b1, b2);
        let rng_seed = derive_seed(seed, STREAM_BATCH);
        Ok(TrainState {
            gen_g,
            gen_f,
            disc_x,
            disc_y,
            opt_gen,
            opt_disc,
            generator_updates: 0,
            discriminator_updates: 0,
            epoch: 0,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            pool_x: Vec::new(),
            pool_y: Vec::new(),
            config: *config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator_updates(&self) -> u64 {
        self.generator_updates
    }

    pub fn discriminator_updates(&self) -> u64 {
        self.discriminator_updates
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `generator_updates = k * discriminator_updates + r` with `0 <= r < k`.
    pub fn ratio_invariant_holds(&self) -> bool {
        let k = self.config.g_steps_per_d_step as u64;
        let base = k * self.discriminator_updates;
        self.generator_updates >= base && self.generator_updates - base < k
    }

    pub fn generator(&self, direction: Direction) -> &Generator<T> {
        match direction {
            Direction::A2b => &self.gen_g,
            Direction::B2a => &self.gen_f,
        }
    }

    /// Learning rate for the current epoch.
    fn learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.epoch)
    }

    /// One generator update on `batch`, plus one discriminator update every
    /// `g_steps_per_d_step`-th call. The discriminators see the fakes
    /// produced before this step's generator update, detached.
    pub fn train_step(&mut self, batch: &TrainingBatch) -> Result<LossBreakdown> {
        self.step_inner(batch, true)
    }

    /// A generator update only; the discriminators are left alone and the
    /// update counter for them does not advance.
    pub fn generator_step(&mut self, batch: &TrainingBatch) -> Result<LossBreakdown> {
        self.step_inner(batch, false)
    }

    fn step_inner(&mut self, batch: &TrainingBatch, allow_disc: bool) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let cfg = self.config.loss;
        let t = |s: &[crate::data::Sample]| Image::batch_tensor::<T>(&TrainingBatch::images(s));
        let (x, y, xn, yn) = (t(&batch.x)?, t(&batch.y)?, t(&batch.x_neg)?, t(&batch.y_neg)?);
        let mut gp = GeneratorPass::build(&self.gen_g, &self.gen_f, &self.disc_x, &self.disc_y, &x, &y, &cfg)?;
        let mut fake_x = gp.graph.value(gp.fake_x).clone();
        let mut fake_y = gp.graph.value(gp.fake_y).clone();
        if self.config.image_pool > 0 {
            fake_x = query_pool(&mut self.pool_x, fake_x, self.config.image_pool, &mut self.rng)?;
            fake_y = query_pool(&mut self.pool_y, fake_y, self.config.image_pool, &mut self.rng)?;
        }
        let mut dp = DiscriminatorPass::build(&self.disc_x, &self.disc_y, &x, &y, &fake_x, &fake_y, Some(&xn), Some(&yn), &cfg)?;
        let losses = breakdown(&gp, &dp);
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                step: self.generator_updates + 1,
                breakdown: losses.to_string(),
            });
        }
        let lr = self.learning_rate();

        gp.graph.backward(gp.total)?;
        let grads: Vec<Option<&Tensor<T>>> = gp.params_g.iter().chain(&gp.params_f).map(|&v| gp.graph.grad(v)).collect();
        let params = self
            .gen_g
            .network_mut()
            .params_mut()
            .iter_mut()
            .chain(self.gen_f.network_mut().params_mut().iter_mut())
            .map(|p| &mut p.value);
        self.opt_gen.step(params, &grads, lr);
        self.generator_updates += 1;

        if allow_disc && self.generator_updates % self.config.g_steps_per_d_step as u64 == 0 {
            dp.graph.backward(dp.total)?;
            let grads: Vec<Option<&Tensor<T>>> = dp.params_x.iter().chain(&dp.params_y).map(|&v| dp.graph.grad(v)).collect();
            let params = self
                .disc_x
                .network_mut()
                .params_mut()
                .iter_mut()
                .chain(self.disc_y.network_mut().params_mut().iter_mut())
                .map(|p| &mut p.value);
            self.opt_disc.step(params, &grads, lr);
            self.discriminator_updates += 1;
        }
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<T>> {
        let meta = StateMeta {
            config: self.config,
            config_hash: self.config.hash(),
            source_hash: SOURCE_HASH.to_string(),
            generator_updates: self.generator_updates,
            discriminator_updates: self.discriminator_updates,
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            adam_gen: AdamMeta {
                steps: self.opt_gen.steps(),
                eps: self.opt_gen.eps,
            },
            adam_disc: AdamMeta {
                steps: self.opt_disc.steps(),
                eps: self.opt_disc.eps,
            },
            pool_x: self.pool_x.len(),
            pool_y: self.pool_y.len(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(&meta)?);
        for (prefix, net) in [
            ("G.", self.gen_g.network()),
            ("F.", self.gen_f.network()),
            ("DX.", self.disc_x.network()),
            ("DY.", self.disc_y.network()),
        ] {
            for p in net.params() {
                ck.push(format!("{prefix}{}", p.name), p.value.clone());
            }
        }
        for (prefix, opt) in [("opt_gen", &self.opt_gen), ("opt_disc", &self.opt_disc)] {
            for (i, m) in opt.first_moments().iter().enumerate() {
                ck.push(format!("{prefix}.m.{i}"), m.clone());
            }
            for (i, v) in opt.second_moments().iter().enumerate() {
                ck.push(format!("{prefix}.v.{i}"), v.clone());
            }
        }
        for (prefix, pool) in [("pool_x", &self.pool_x), ("pool_y", &self.pool_y)] {
            for (i, t) in pool.iter().enumerate() {
                ck.push(format!("{prefix}.{i}"), t.clone());
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let meta: StateMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut state = TrainState::new(&meta.config)?;
        state.gen_g.network_mut().load_values(ck.with_prefix("G."))?;
        state.gen_f.network_mut().load_values(ck.with_prefix("F."))?;
        state.disc_x.network_mut().load_values(ck.with_prefix("DX."))?;
        state.disc_y.network_mut().load_values(ck.with_prefix("DY."))?;
        let (b1, b2) = meta.config.adam_betas;
        let moments = |prefix: &str, n: usize| -> Result<Vec<Tensor<T>>> {
            let v = ck.with_prefix(prefix);
            if v.len() != n {
                return Err(Error::Checkpoint(format!("{prefix}: expected {n} tensors, found {}", v.len())));
            }
            Ok(v)
        };
        let ng = state.opt_gen.first_moments().len();
        let nd = state.opt_disc.first_moments().len();
        state.opt_gen = Adam::from_state(
            b1,
            b2,
            meta.adam_gen.eps,
            meta.adam_gen.steps,
            moments("opt_gen.m.", ng)?,
            moments("opt_gen.v.", ng)?,
        );
        state.opt_disc = Adam::from_state(
            b1,
            b2,
            meta.adam_disc.eps,
            meta.adam_disc.steps,
            moments("opt_disc.m.", nd)?,
            moments("opt_disc.v.", nd)?,
        );
        state.pool_x = moments("pool_x.", meta.pool_x)?;
        state.pool_y = moments("pool_y.", meta.pool_y)?;
        state.generator_updates = meta.generator_updates;
        state.discriminator_updates = meta.discriminator_updates;
        state.epoch = meta.epoch;
        state.rng_seed = meta.rng_seed;
        state.rng = ChaCha8Rng::seed_from_u64(meta.rng_seed);
        let pos: u128 = meta
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position {}", meta.rng_word_pos)))?;
        state.rng.set_word_pos(pos);
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn gen_params<'a, T: Real>(g: &'a Generator<T>, f: &'a Generator<T>) -> impl Iterator<Item = &'a Tensor<T>> {
    g.network().params().iter().chain(f.network().params()).map(|p| &p.value)
}

fn gen_params_d<'a, T: Real>(x: &'a Discriminator<T>, y: &'a Discriminator<T>) -> impl Iterator<Item = &'a Tensor<T>> {
    x.network().params().iter().chain(y.network().params()).map(|p| &p.value)
}

/// History buffer: fills up first, then each fake is swapped for a stored
/// one with probability one half.
fn query_pool<T: Real>(pool: &mut Vec<Tensor<T>>, fakes: Tensor<T>, capacity: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let n = fakes.shape().n;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = fakes.sample(i);
        if pool.len() < capacity {
            pool.push(f.clone());
            out.push(f);
        } else if rng.random_bool(0.5) {
            let k = rng.random_range(0..capacity);
            out.push(std::mem::replace(&mut pool[k], f));
        } else {
            out.push(f);
        }
    }
    Ok(Tensor::stack(&out)?)
}

pub struct FitOptions<'a> {
    /// Where `train.csv` and `checkpoint` go; nothing is written when unset.
    pub out_dir: Option<&'a Path>,
    /// Continue from `out_dir/checkpoint` when present.
    pub resume: bool,
    /// Stop (after checkpointing) once this many epochs are complete.
    pub halt_after: Option<usize>,
    /// Print a progress line per epoch.
    pub verbose: bool,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        FitOptions {
            out_dir: None,
            resume: false,
            halt_after: None,
            verbose: false,
        }
    }
}

pub struct FitOutcome<T> {
    pub state: TrainState<T>,
    pub log: Vec<LogRow>,
}

pub fn steps_per_epoch(data: &UnpairedDataset, split: &Split, batch_size: usize) -> usize {
    let view = data.train_view(split);
    let n = view.len(crate::data::Domain::X).max(view.len(crate::data::Domain::Y));
    n.div_ceil(batch_size)
}

/// Trains for `config.epochs`, logging every step.
pub fn fit<T: Real>(data: &UnpairedDataset, split: &Split, config: &TrainConfig, opts: &FitOptions) -> Result<FitOutcome<T>> {
    config.validate()?;
    if config.generator.input_size != data.size() {
        return Err(Error::Config(format!(
            "model input_size {} but dataset images are {}x{}",
            config.generator.input_size,
            data.size(),
            data.size()
        )));
    }
    let ck_path = opts.out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let log_path = opts.out_dir.map(|d| d.join(LOG_FILE));
    if let Some(d) = opts.out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let resuming = opts.resume && ck_path.as_ref().is_some_and(|p| p.exists());
    let mut state = if resuming {
        let state = TrainState::<T>::load(ck_path.as_ref().unwrap())?;
        if state.config != *config {
            return Err(Error::Config(format!(
                "checkpoint was trained with config {} but {} was requested",
                state.config.hash(),
                config.hash()
            )));
        }
        state
    } else {
        TrainState::<T>::new(config)?
    };
    let mut log = Vec::new();
    let mut writer = match &log_path {
        Some(p) if resuming => {
            let w = LogWriter::resume(p, state.generator_updates)?;
            log = read_log(p)?;
            Some(w)
        }
        Some(p) => Some(LogWriter::create(p)?),
        None => None,
    };
    let view = data.train_view(split);
    let spe = steps_per_epoch(data, split, config.batch_size);
    while state.epoch < config.epochs {
        if opts.halt_after.is_some_and(|h| state.epoch >= h) {
            break;
        }
        let epoch = state.epoch;
        let mut last = LossBreakdown::default();
        for _ in 0..spe {
            let batch = view.next_batch(&mut state.rng, config.batch_size)?;
            last = state.train_step(&batch)?;
            let row = LogRow {
                step: state.generator_updates,
                epoch,
                losses: last,
            };
            if let Some(w) = writer.as_mut() {
                w.push(&row)?;
            }
            log.push(row);
        }
        state.epoch += 1;
        if opts.verbose {
            println!(
                "epoch {}/{} step {} lr {:.3e} cycle {:.5} total_G {:.5} total_DX {:.5} total_DY {:.5}",
                state.epoch,
                config.epochs,
                state.generator_updates,
                config.learning_rate_at(epoch),
                last.cycle,
                last.total_generator,
                last.total_discriminator_x,
                last.total_discriminator_y
            );
        }
        let periodic = config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0;
        let halting = opts.halt_after.is_some_and(|h| state.epoch >= h);
        if periodic || halting {
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
            if let Some(p) = &ck_path {
                state.save(p)?;
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    if let Some(p) = &ck_path {
        state.save(p)?;
    }
    Ok(FitOutcome { state, log })
}

/// Per-image MAE, PSNR and SSIM of `translator` against paired ground
/// truth, all in metric space.
pub fn evaluate_translator(
    translator: &dyn Translator,
    data: &UnpairedDataset,
    split: &Split,
    direction: Direction,
    params: &SsimParams,
) -> Result<MetricReport> {
    let pairs = data.paired_test(split, direction)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (src, dst) in pairs {
        let synth = translator.translate(&src.image)?.to_metric();
        let real = dst.image.to_metric();
        rows.push(MetricRow {
            id: src.id.clone(),
            mae: mae(&synth, &real)?,
            psnr: psnr(&synth, &real, params.dynamic_range)?,
            ssim: ssim(&synth, &real, params)?,
        });
    }
    Ok(MetricReport::new(rows))
}

pub fn evaluate<T: Real>(
    state: &TrainState<T>,
    data: &UnpairedDataset,
    split: &Split,
    direction: Direction,
    params: &SsimParams,
) -> Result<MetricReport> {
    evaluate_translator(state.generator(direction), data, split, direction, params)
}

/// Loads a checkpoint at whatever precision it was stored in and
/// evaluates one direction.
pub fn evaluate_checkpoint(
    path: &Path,
    data: &UnpairedDataset,
    split: &Split,
    direction: Direction,
    params: &SsimParams,
) -> Result<MetricReport> {
    match peek_dtype(path)? {
        DType::F32 => evaluate(&TrainState::<f32>::load(path)?, data, split, direction, params),
        DType::F64 => evaluate(&TrainState::<f64>::load(path)?, data, split, direction, params),
    }
}

/// Real, synthesized and absolute-error images for every test pair.
pub struct FigureSet {
    pub id: String,
    pub direction: Direction,
    pub real: Image,
    pub synth: Image,
    pub error: Image,
}

pub fn figure_sets(
    translator: &dyn Translator,
    data: &UnpairedDataset,
    split: &Split,
    direction: Direction,
) -> Result<Vec<FigureSet>> {
    data.paired_test(split, direction)?
        .into_iter()
        .map(|(src, dst)| {
            let synth = translator.translate(&src.image)?.to_metric();
            let real = dst.image.to_metric();
            Ok(FigureSet {
                id: src.id.clone(),
                direction,
                error: error_map(&real, &synth)?,
                real,
                synth,
            })
        })
        .collect()
}
