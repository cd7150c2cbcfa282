use dccycle_autograd::{Real, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Declared intensity interval of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[-1, 1]`, what the networks consume and produce.
    Model,
    /// `[0, 1]`, what every metric consumes.
    Metric,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Model => (-1.0, 1.0),
            ValueRange::Metric => (0.0, 1.0),
        }
    }

    fn label(self) -> &'static str {
        match self {
            ValueRange::Model => "[-1, 1]",
            ValueRange::Metric => "[0, 1]",
        }
    }
}

/// Single-channel intensity grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
    range: ValueRange,
}

impl Image {
    pub const CHANNELS: usize = 1;

    /// Validates dimensions (positive, divisible by 4) and that every value
    /// lies inside `range`.
    pub fn new(height: usize, width: usize, data: Vec<f64>, range: ValueRange) -> Result<Self> {
        if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
            return Err(Error::Shape(format!(
                "image dimensions {height}x{width} must be positive multiples of 4"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image given {} values",
                data.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(Error::Range {
                value,
                index,
                range: range.label(),
            });
        }
        Ok(Image {
            height,
            width,
            data,
            range,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, range: ValueRange) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Linear remap onto `[0, 1]`; identity for metric-space images.
    pub fn to_metric(&self) -> Image {
        match self.range {
            ValueRange::Metric => self.clone(),
            ValueRange::Model => self.remap(ValueRange::Metric, |v| (v + 1.0) * 0.5),
        }
    }

    /// Linear remap onto `[-1, 1]`; identity for model-space images.
    pub fn to_model(&self) -> Image {
        match self.range {
            ValueRange::Model => self.clone(),
            ValueRange::Metric => self.remap(ValueRange::Model, |v| 2.0 * v - 1.0),
        }
    }

    fn remap(&self, range: ValueRange, f: impl Fn(f64) -> f64) -> Image {
        let (lo, hi) = range.bounds();
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v).clamp(lo, hi)).collect(),
            range,
        }
    }

    /// `[1, 1, H, W]` tensor of the raw values.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("image tensor")
    }

    /// Reads sample `index` of a single-channel batch tensor.
    pub fn from_tensor<T: Real>(tensor: &Tensor<T>, index: usize, range: ValueRange) -> Result<Self> {
        let s = tensor.shape();
        if s.c != 1 || index >= s.n {
            return Err(Error::Shape(format!(
                "cannot read image {index} from tensor {s}"
            )));
        }
        let data = tensor
            .sample(index)
            .data()
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        Self::new(s.h, s.w, data, range)
    }

    /// Stacks same-sized images into an `[N, 1, H, W]` tensor.
    pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let parts: Vec<_> = images.iter().map(|im| im.to_tensor()).collect();
        Ok(Tensor::stack(&parts)?)
    }
}
