use dccycle_autograd::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::losses::LossConfig;
use crate::model::{DiscriminatorSpec, GeneratorSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub g_steps_per_d_step: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    /// Linear decay to near zero over the second half of the epochs.
    pub lr_decay: bool,
    pub seed: u64,
    pub loss: LossConfig,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// History buffer of past fakes for the discriminators; 0 disables it.
    pub image_pool: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub precision: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1,
            g_steps_per_d_step: 5,
            optimizer: Optimizer::Adam,
            learning_rate: 2e-4,
            adam_betas: (0.5, 0.999),
            lr_decay: true,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            image_pool: 0,
            generator: GeneratorSpec::full_scale(),
            discriminator: DiscriminatorSpec::full_scale(),
            precision: DType::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.g_steps_per_d_step == 0 {
            return Err(Error::Config("g_steps_per_d_step must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("adam_betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.generator.input_size != self.discriminator.input_size {
            return Err(Error::Config(format!(
                "generator input_size {} differs from discriminator input_size {}",
                self.generator.input_size, self.discriminator.input_size
            )));
        }
        self.loss.validate()?;
        self.generator.validate()?;
        self.discriminator_spec().validate()
    }

    /// The discriminator spec with its output activation set by the loss
    /// family.
    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            output_activation: self.loss.family.discriminator_activation(),
            ..self.discriminator
        }
    }

    /// Multiplier on the base learning rate during `epoch` (0-based).
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        if !self.lr_decay {
            return 1.0;
        }
        let hold = self.epochs / 2;
        let decay = self.epochs - hold;
        1.0 - epoch.saturating_sub(hold) as f64 / (decay + 1) as f64
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_factor(epoch)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
