use std::path::{Path, PathBuf};

use dccycle_autograd::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::data::{ingest_dirs, ingest_manifest, toy_dataset, ToyParams, UnpairedDataset};
use crate::losses::LossFamily;
use crate::model::{DiscriminatorSpec, GeneratorSpec};
use crate::trainer::{Optimizer, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generated in memory from the toy parameters.
    Toy,
    /// `<data_path>/x/*.png` and `<data_path>/y/*.png`.
    Dirs,
    /// A `file,domain,pair_id` CSV at `data_path`.
    Manifest,
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(DataSource::Toy),
            "dirs" => Ok(DataSource::Dirs),
            "manifest" => Ok(DataSource::Manifest),
            other => Err(Error::Config(format!(
                "data_source: unknown value `{other}` (expected toy, dirs or manifest)"
            ))),
        }
    }
}

impl DataSource {
    fn name(self) -> &'static str {
        match self {
            DataSource::Toy => "toy",
            DataSource::Dirs => "dirs",
            DataSource::Manifest => "manifest",
        }
    }
}

/// Named starting points for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 64x64 synthetic data, small networks, 30 epochs, two seeds.
    Toy,
    /// 256x256, full-size networks, 200 epochs, ten seeds.
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("preset: unknown value `{other}` (expected toy or full)"))),
        }
    }
}

/// Everything a run or plan needs, as read from the flat config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub data_source: DataSource,
    pub data_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub toy: ToyParams,
    pub train: TrainConfig,
    pub repeat_seeds: Vec<u64>,
    pub beta_grid: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub emit_figures: bool,
}

/// Documented keys, in the order `config.resolved` lists them.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("name", "plan name; runs go under <out_dir>/<name>/"),
    ("seed", "master seed for split, initialization and sampling"),
    ("data_source", "toy | dirs | manifest"),
    ("data_path", "directory holding x/ and y/, or the manifest CSV; empty for toy"),
    ("image_size", "square resolution images are resized to"),
    ("train_fraction", "share of each domain used for training"),
    ("toy_n", "toy images per domain"),
    ("toy_gamma", "gamma of the toy Y transform"),
    ("toy_seed", "seed of the toy corpus"),
    ("gen_base_channels", "generator width after the stem"),
    ("gen_residual_blocks", "generator residual blocks"),
    ("gen_downsample_stages", "generator stride-2 stages"),
    ("disc_base_channels", "discriminator width of the first stage"),
    ("disc_downsample_stages", "discriminator stride-2 stages"),
    ("epochs", "training epochs"),
    ("batch_size", "images per step"),
    ("g_steps_per_d_step", "generator updates per discriminator update"),
    ("optimizer", "adam"),
    ("learning_rate", "base learning rate"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("lr_decay", "linear decay over the second half of training"),
    ("checkpoint_every", "epochs between checkpoints; 0 for final only"),
    ("image_pool", "discriminator history buffer size; 0 disables"),
    ("precision", "f32 | f64"),
    ("loss_family", "mae_mse | ssim_ce"),
    ("dual_contrast", "add the negatives term to the discriminator loss"),
    ("lambda", "cycle weight"),
    ("beta", "dual-contrast weight"),
    ("ssim_window", "odd Gaussian window size"),
    ("ssim_sigma", "Gaussian window standard deviation"),
    ("ssim_k1", "luminance constant factor"),
    ("ssim_k2", "contrast constant factor"),
    ("ssim_dynamic_range", "dynamic range L for SSIM and PSNR"),
    ("repeat_seeds", "seeds of the ablation repeats"),
    ("beta_grid", "beta values of the sweep"),
    ("sweep_seeds", "seeds of each sweep point"),
    ("workers", "runs trained concurrently"),
    ("out_dir", "root of the run tree"),
    ("emit_figures", "write real/synth/error PNGs for every run"),
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => {
                let mut train = TrainConfig {
                    epochs: 30,
                    generator: GeneratorSpec::toy(),
                    discriminator: DiscriminatorSpec::toy(),
                    ..TrainConfig::default()
                };
                train.precision = DType::F32;
                RunConfig {
                    name: "toy".into(),
                    data_source: DataSource::Toy,
                    data_path: None,
                    train_fraction: 0.8,
                    toy: ToyParams::default(),
                    train,
                    repeat_seeds: vec![0, 1],
                    beta_grid: default_beta_grid(),
                    sweep_seeds: vec![0],
                    workers: 1,
                    out_dir: PathBuf::from("runs"),
                    emit_figures: true,
                }
            }
            Preset::Full => RunConfig {
                name: "full".into(),
                data_source: DataSource::Dirs,
                data_path: Some(PathBuf::from("data")),
                train_fraction: 0.9,
                toy: ToyParams {
                    size: 256,
                    ..ToyParams::default()
                },
                train: TrainConfig::default(),
                repeat_seeds: (0..10).collect(),
                beta_grid: default_beta_grid(),
                sweep_seeds: vec![0],
                workers: 1,
                out_dir: PathBuf::from("runs"),
                emit_figures: true,
            },
        }
    }

    /// Preset (the file's `preset` key, else `fallback`) overlaid with the
    /// file's keys.
    pub fn from_toml_str(text: &str, fallback: Preset) -> Result<Self> {
        let cfg = Self::overlay(text, fallback)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn overlay(text: &str, fallback: Preset) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config syntax: {}", e.message())))?;
        let preset = match table.remove("preset") {
            Some(Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("preset: expected a string".into())),
            None => fallback,
        };
        let mut cfg = RunConfig::preset(preset);
        for (key, value) in &table {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path, fallback: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, fallback)
    }

    /// Optional file over the preset, then `key=value` overrides in order.
    /// Validation runs once at the end, so an override can repair a file.
    pub fn resolve<S: AsRef<str>>(file: Option<&Path>, fallback: Preset, overrides: &[S]) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::overlay(&text, fallback)?
            }
            None => Self::preset(fallback),
        };
        for o in overrides {
            cfg.apply_override(o.as_ref())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override; the value is read as TOML, falling
    /// back to a bare string. Does not validate.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        let t = &mut self.train;
        match key {
            "name" => self.name = string(key, value)?,
            "seed" => t.seed = int(key, value)?,
            "data_source" => self.data_source = string(key, value)?.parse()?,
            "data_path" => {
                let p = string(key, value)?;
                self.data_path = (!p.is_empty()).then(|| PathBuf::from(p));
            }
            "image_size" => {
                let s = int(key, value)? as usize;
                t.generator.input_size = s;
                t.discriminator.input_size = s;
                self.toy.size = s;
            }
            "train_fraction" => self.train_fraction = float(key, value)?,
            "toy_n" => self.toy.n = int(key, value)? as usize,
            "toy_gamma" => self.toy.gamma = float(key, value)?,
            "toy_seed" => self.toy.seed = int(key, value)?,
            "gen_base_channels" => t.generator.base_channels = int(key, value)? as usize,
            "gen_residual_blocks" => t.generator.n_residual_blocks = int(key, value)? as usize,
            "gen_downsample_stages" => t.generator.downsample_stages = int(key, value)? as usize,
            "disc_base_channels" => t.discriminator.base_channels = int(key, value)? as usize,
            "disc_downsample_stages" => t.discriminator.downsample_stages = int(key, value)? as usize,
            "epochs" => t.epochs = int(key, value)? as usize,
            "batch_size" => t.batch_size = int(key, value)? as usize,
            "g_steps_per_d_step" => t.g_steps_per_d_step = int(key, value)? as usize,
            "optimizer" => match string(key, value)?.as_str() {
                "adam" => t.optimizer = Optimizer::Adam,
                other => return Err(Error::Config(format!("optimizer: unknown value `{other}` (expected adam)"))),
            },
            "learning_rate" => t.learning_rate = float(key, value)?,
            "adam_beta1" => t.adam_betas.0 = float(key, value)?,
            "adam_beta2" => t.adam_betas.1 = float(key, value)?,
            "lr_decay" => t.lr_decay = boolean(key, value)?,
            "checkpoint_every" => t.checkpoint_every = int(key, value)? as usize,
            "image_pool" => t.image_pool = int(key, value)? as usize,
            "precision" => {
                t.precision = string(key, value)?
                    .parse()
                    .map_err(|_| Error::Config("precision: expected f32 or f64".into()))?
            }
            "loss_family" => {
                t.loss.family = string(key, value)?
                    .parse()
                    .map_err(|e: Error| Error::Config(format!("loss_family: {e}")))?
            }
            "dual_contrast" => t.loss.dual_contrast = boolean(key, value)?,
            "lambda" => t.loss.lambda = float(key, value)?,
            "beta" => t.loss.beta = float(key, value)?,
            "ssim_window" => t.loss.ssim.window_size = int(key, value)? as usize,
            "ssim_sigma" => t.loss.ssim.window_sigma = float(key, value)?,
            "ssim_k1" => t.loss.ssim.k1 = float(key, value)?,
            "ssim_k2" => t.loss.ssim.k2 = float(key, value)?,
            "ssim_dynamic_range" => t.loss.ssim.dynamic_range = float(key, value)?,
            "repeat_seeds" => self.repeat_seeds = int_list(key, value)?,
            "beta_grid" => self.beta_grid = float_list(key, value)?,
            "sweep_seeds" => self.sweep_seeds = int_list(key, value)?,
            "workers" => self.workers = int(key, value)? as usize,
            "out_dir" => self.out_dir = PathBuf::from(string(key, value)?),
            "emit_figures" => self.emit_figures = boolean(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("`{}` is not a usable directory name", self.name));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", format!("{} is outside (0, 1)", self.train_fraction));
        }
        if self.data_source != DataSource::Toy && self.data_path.is_none() {
            return bad("data_path", format!("required when data_source is {}", self.data_source.name()));
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1".into());
        }
        if self.repeat_seeds.is_empty() {
            return bad("repeat_seeds", "must not be empty".into());
        }
        if self.sweep_seeds.is_empty() {
            return bad("sweep_seeds", "must not be empty".into());
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return bad("beta_grid", format!("{b} is not a nonnegative number"));
        }
        if self.toy.n < 2 {
            return bad("toy_n", "need at least 2 images".into());
        }
        if !(self.toy.gamma > 0.0) {
            return bad("toy_gamma", "must be positive".into());
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(m) | Error::Spec(m) => Error::Config(m),
            other => other,
        })
    }

    /// Every key with its current value.
    pub fn to_table(&self) -> Table {
        let t = &self.train;
        let mut m = Table::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("name", self.name.clone().into());
        put("seed", (t.seed as i64).into());
        put("data_source", self.data_source.name().into());
        let path = self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        put("data_path", path.into());
        put("image_size", (t.generator.input_size as i64).into());
        put("train_fraction", self.train_fraction.into());
        put("toy_n", (self.toy.n as i64).into());
        put("toy_gamma", self.toy.gamma.into());
        put("toy_seed", (self.toy.seed as i64).into());
        put("gen_base_channels", (t.generator.base_channels as i64).into());
        put("gen_residual_blocks", (t.generator.n_residual_blocks as i64).into());
        put("gen_downsample_stages", (t.generator.downsample_stages as i64).into());
        put("disc_base_channels", (t.discriminator.base_channels as i64).into());
        put("disc_downsample_stages", (t.discriminator.downsample_stages as i64).into());
        put("epochs", (t.epochs as i64).into());
        put("batch_size", (t.batch_size as i64).into());
        put("g_steps_per_d_step", (t.g_steps_per_d_step as i64).into());
        put("optimizer", "adam".into());
        put("learning_rate", t.learning_rate.into());
        put("adam_beta1", t.adam_betas.0.into());
        put("adam_beta2", t.adam_betas.1.into());
        put("lr_decay", t.lr_decay.into());
        put("checkpoint_every", (t.checkpoint_every as i64).into());
        put("image_pool", (t.image_pool as i64).into());
        put("precision", t.precision.to_string().into());
        put("loss_family", t.loss.family.to_string().into());
        put("dual_contrast", t.loss.dual_contrast.into());
        put("lambda", t.loss.lambda.into());
        put("beta", t.loss.beta.into());
        put("ssim_window", (t.loss.ssim.window_size as i64).into());
        put("ssim_sigma", t.loss.ssim.window_sigma.into());
        put("ssim_k1", t.loss.ssim.k1.into());
        put("ssim_k2", t.loss.ssim.k2.into());
        put("ssim_dynamic_range", t.loss.ssim.dynamic_range.into());
        put("repeat_seeds", Value::Array(self.repeat_seeds.iter().map(|&s| (s as i64).into()).collect()));
        put("beta_grid", Value::Array(self.beta_grid.iter().map(|&b| b.into()).collect()));
        put("sweep_seeds", Value::Array(self.sweep_seeds.iter().map(|&s| (s as i64).into()).collect()));
        put("workers", (self.workers as i64).into());
        put("out_dir", self.out_dir.display().to_string().into());
        put("emit_figures", self.emit_figures.into());
        m
    }

    /// The `config.resolved` text: every key, in documented order.
    pub fn to_resolved(&self) -> String {
        let table = self.to_table();
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            if let Some(v) = table.get(*key) {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_resolved().as_bytes()))
    }

    pub fn load_dataset(&self) -> Result<UnpairedDataset> {
        let size = self.train.generator.input_size;
        match self.data_source {
            DataSource::Toy => toy_dataset(&ToyParams { size, ..self.toy }),
            DataSource::Dirs => {
                let root = self.data_path.as_ref().expect("validated");
                ingest_dirs(&root.join("x"), &root.join("y"), size)
            }
            DataSource::Manifest => ingest_manifest(self.data_path.as_ref().expect("validated"), size),
        }
    }
}

pub fn default_beta_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn int(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::Config(format!("{key}: expected a nonnegative integer, got {v}"))),
    }
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key}: expected a number, got {v}"))),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Config(format!("{key}: expected true or false, got {v}")))
}

fn string(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("{key}: expected a string, got {v}")))
}

fn int_list(key: &str, v: &Value) -> Result<Vec<u64>> {
    v.as_array()
        .ok_or_else(|| Error::Config(format!("{key}: expected a list of integers, got {v}")))?
        .iter()
        .map(|x| int(key, x))
        .collect()
}

fn float_list(key: &str, v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Config(format!("{key}: expected a list of numbers, got {v}")))?
        .iter()
        .map(|x| float(key, x))
        .collect()
}

// family lookups used by the plans
pub(crate) fn family_slug(f: LossFamily) -> &'static str {
    match f {
        LossFamily::MaeMse => "mae_mse",
        LossFamily::SsimCe => "ssim_ce",
    }
}
