use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

/// Encoder, residual trunk, decoder. Square single-channel inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_size: usize,
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    pub downsample_stages: usize,
    pub normalization: Normalization,
}

impl GeneratorSpec {
    pub fn new(input_size: usize, base_channels: usize, n_residual_blocks: usize, downsample_stages: usize) -> Self {
        GeneratorSpec {
            input_size,
            base_channels,
            n_residual_blocks,
            downsample_stages,
            normalization: Normalization::Instance,
        }
    }

    /// 256 pixels, 64 base channels, nine residual blocks.
    pub fn full_scale() -> Self {
        Self::new(256, 64, 9, 2)
    }

    pub fn toy() -> Self {
        Self::new(64, 16, 3, 2)
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.downsample_stages
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_residual_blocks == 0 {
            return Err(Error::Spec("n_residual_blocks must be at least 1".into()));
        }
        if self.downsample_stages == 0 {
            return Err(Error::Spec("downsample_stages must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Spec("base_channels must be at least 1".into()));
        }
        let factor = 1usize
            .checked_shl(self.downsample_stages as u32)
            .ok_or_else(|| Error::Spec("too many downsample stages".into()))?;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Spec(format!(
                "input_size {} is not divisible by {factor} (2^{} downsample stages)",
                self.input_size, self.downsample_stages
            )));
        }
        // 7x7 stem uses reflection padding 3; residual blocks pad by 1.
        if self.input_size < 4 || self.bottleneck_size() < 2 {
            return Err(Error::Spec(format!(
                "input_size {} leaves a {}x{} bottleneck; reflection padding needs at least 2x2",
                self.input_size,
                self.bottleneck_size(),
                self.bottleneck_size()
            )));
        }
        Ok(())
    }
}

/// Fully convolutional patch classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_size: usize,
    pub base_channels: usize,
    pub downsample_stages: usize,
    pub output_activation: OutputActivation,
}

impl DiscriminatorSpec {
    pub const STAGE_KERNEL: usize = 4;
    pub const HEAD_KERNEL: usize = 3;

    pub fn new(input_size: usize, base_channels: usize, downsample_stages: usize, output_activation: OutputActivation) -> Self {
        DiscriminatorSpec {
            input_size,
            base_channels,
            downsample_stages,
            output_activation,
        }
    }

    pub fn full_scale() -> Self {
        Self::new(256, 64, 4, OutputActivation::Sigmoid)
    }

    pub fn toy() -> Self {
        Self::new(64, 16, 4, OutputActivation::Sigmoid)
    }

    /// Side length of the output patch grid.
    pub fn grid_size(&self) -> usize {
        self.input_size >> self.downsample_stages
    }

    /// Input pixels seen by one output patch: two stride-1 heads followed,
    /// going backwards, by each stride-2 stage.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        for _ in 0..2 {
            rf += Self::HEAD_KERNEL - 1;
        }
        for _ in 0..self.downsample_stages {
            rf = (rf - 1) * 2 + Self::STAGE_KERNEL;
        }
        rf
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsample_stages == 0 || self.base_channels == 0 {
            return Err(Error::Spec(
                "discriminator needs at least one stage and one channel".into(),
            ));
        }
        let factor = 1usize
            .checked_shl(self.downsample_stages as u32)
            .ok_or_else(|| Error::Spec("too many downsample stages".into()))?;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Spec(format!(
                "input_size {} is not divisible by {factor} (2^{} downsample stages)",
                self.input_size, self.downsample_stages
            )));
        }
        if self.downsample_stages > 1 && self.grid_size() < 2 {
            return Err(Error::Spec(format!(
                "input_size {} yields a {}x{} grid; instance normalization needs at least 2x2",
                self.input_size,
                self.grid_size(),
                self.grid_size()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_grid_is_sixteen_patches_per_side() {
        let d = DiscriminatorSpec::full_scale();
        assert_eq!(d.grid_size(), 16);
        assert_eq!(d.grid_size() * d.grid_size(), 256);
        assert_eq!(d.receptive_field(), 110);
    }

    #[test]
    fn indivisible_input_names_dimension() {
        let err = GeneratorSpec::new(30, 8, 1, 2).validate().unwrap_err().to_string();
        assert!(err.contains("input_size 30"), "{err}");
        assert!(GeneratorSpec::new(64, 8, 0, 2).validate().is_err());
        assert!(GeneratorSpec::new(64, 8, 1, 0).validate().is_err());
        assert!(GeneratorSpec::new(4, 8, 1, 2).validate().is_err());
        assert!(GeneratorSpec::toy().validate().is_ok());
        assert!(DiscriminatorSpec::new(16, 4, 4, OutputActivation::Sigmoid).validate().is_err());
    }
}
