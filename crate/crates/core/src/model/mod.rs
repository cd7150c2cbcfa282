//! Generators, patch discriminators and the image type they exchange.

mod checkpoint;
mod image;
mod network;
mod spec;

pub use checkpoint::{peek_dtype, Checkpoint, CHECKPOINT_HEADER};
pub use image::{Image, ValueRange};
pub use network::{derive_seed, Layer, Network, Param, INIT_STD, NORM_EPS};
pub use spec::{DiscriminatorSpec, GeneratorSpec, Normalization, OutputActivation};

use dccycle_autograd::{Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};
use network::NetworkBuilder;

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    net: Network<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    net: Network<T>,
}

/// A network whose parameters have been placed on a particular graph.
pub struct Bound<'a, T> {
    net: &'a Network<T>,
    params: Vec<Var>,
    input_size: usize,
}

impl<T: Real> Bound<'_, T> {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.c != 1 || s.h != self.input_size || s.w != self.input_size {
            return Err(Error::Shape(format!(
                "network expects [N, 1, {0}, {0}] input, got {s}",
                self.input_size
            )));
        }
        self.net.forward(g, &self.params, x)
    }
}

/// Encoder (7x7 stem plus strided 3x3 convolutions), residual trunk, and a
/// mirrored decoder of fractionally strided convolutions ending in `tanh`.
pub fn build_generator<T: Real>(spec: GeneratorSpec, seed: u64) -> Result<Generator<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetworkBuilder::new(&mut rng);
    let base = spec.base_channels;
    let mut layers = vec![
        Layer::ReflectPad(3),
        b.conv("stem", 1, base, 7, 1, 0),
        Layer::InstanceNorm,
        Layer::Relu,
    ];
    let mut ch = base;
    for i in 0..spec.downsample_stages {
        layers.push(b.conv(&format!("down{i}"), ch, ch * 2, 3, 2, 1));
        layers.extend([Layer::InstanceNorm, Layer::Relu]);
        ch *= 2;
    }
    for i in 0..spec.n_residual_blocks {
        let body = vec![
            Layer::ReflectPad(1),
            b.conv(&format!("res{i}.a"), ch, ch, 3, 1, 0),
            Layer::InstanceNorm,
            Layer::Relu,
            Layer::ReflectPad(1),
            b.conv(&format!("res{i}.b"), ch, ch, 3, 1, 0),
            Layer::InstanceNorm,
        ];
        layers.push(Layer::Residual(body));
    }
    for i in 0..spec.downsample_stages {
        layers.push(b.conv_transpose(&format!("up{i}"), ch, ch / 2, 3, 2, 1, 1));
        layers.extend([Layer::InstanceNorm, Layer::Relu]);
        ch /= 2;
    }
    layers.extend([Layer::ReflectPad(3), b.conv("head", ch, 1, 7, 1, 0), Layer::Tanh]);
    Ok(Generator {
        spec,
        net: b.finish(layers),
    })
}

/// Strided 4x4 stages (no normalization on the first), a stride-1 3x3
/// block, and a single-channel 3x3 head.
pub fn build_discriminator<T: Real>(spec: DiscriminatorSpec, seed: u64) -> Result<Discriminator<T>> {
    spec.validate()?;
    const SLOPE: f64 = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetworkBuilder::new(&mut rng);
    let base = spec.base_channels;
    let cap = base * 8;
    let mut layers = vec![
        b.conv("stage0", 1, base, DiscriminatorSpec::STAGE_KERNEL, 2, 1),
        Layer::LeakyRelu(SLOPE),
    ];
    let mut ch = base;
    for i in 1..spec.downsample_stages {
        let next = (ch * 2).min(cap);
        layers.push(b.conv(&format!("stage{i}"), ch, next, DiscriminatorSpec::STAGE_KERNEL, 2, 1));
        layers.extend([Layer::InstanceNorm, Layer::LeakyRelu(SLOPE)]);
        ch = next;
    }
    let next = (ch * 2).min(cap);
    layers.push(b.conv("block", ch, next, DiscriminatorSpec::HEAD_KERNEL, 1, 1));
    if spec.grid_size() >= 2 {
        layers.push(Layer::InstanceNorm);
    }
    layers.push(Layer::LeakyRelu(SLOPE));
    layers.push(b.conv("head", next, 1, DiscriminatorSpec::HEAD_KERNEL, 1, 1));
    if spec.output_activation == OutputActivation::Sigmoid {
        layers.push(Layer::Sigmoid);
    }
    Ok(Discriminator {
        spec,
        net: b.finish(layers),
    })
}

impl<T: Real> Generator<T> {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound<'_, T> {
        Bound {
            params: self.net.bind(g, trainable),
            net: &self.net,
            input_size: self.spec.input_size,
        }
    }

    /// Runs a model-space batch through the network without tracking
    /// parameter gradients.
    pub fn forward_batch(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let y = bound.apply(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn translate(&self, image: &Image) -> Result<Image> {
        let out = self.forward_batch(&image.to_model().to_tensor())?;
        Image::from_tensor(&out, 0, ValueRange::Model)
    }
}

impl<T: Real> Discriminator<T> {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound<'_, T> {
        Bound {
            params: self.net.bind(g, trainable),
            net: &self.net,
            input_size: self.spec.input_size,
        }
    }

    pub fn score(&self, image: &Image) -> Result<PatchGrid> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(image.to_model().to_tensor());
        let y = bound.apply(&mut g, x)?;
        PatchGrid::from_tensor(g.value(y), 0, self.spec.output_activation)
    }
}

/// Per-patch realness scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    activation: OutputActivation,
}

impl PatchGrid {
    /// Sigmoid grids must lie in `[0, 1]`; saturated endpoints are accepted
    /// because they are representable outputs at finite precision.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, activation: OutputActivation) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} patch grid given {} values",
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| match activation {
            OutputActivation::Sigmoid => !(**v >= 0.0 && **v <= 1.0),
            OutputActivation::Linear => !v.is_finite(),
        }) {
            return Err(Error::Range {
                value,
                index,
                range: match activation {
                    OutputActivation::Sigmoid => "[0, 1]",
                    OutputActivation::Linear => "finite reals",
                },
            });
        }
        Ok(PatchGrid {
            rows,
            cols,
            values,
            activation,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64, activation: OutputActivation) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols], activation)
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize, activation: OutputActivation) -> Result<Self> {
        let s = t.shape();
        if s.c != 1 || index >= s.n {
            return Err(Error::Shape(format!("cannot read patch grid {index} from {s}")));
        }
        let values = t.sample(index).data().iter().map(|v| v.to_f64_lossy()).collect();
        Self::new(s.h, s.w, values, activation)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of patches, `rows * cols`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn activation(&self) -> OutputActivation {
        self.activation
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::from_vec(dccycle_autograd::Shape::new(1, 1, self.rows, self.cols), data).expect("grid tensor")
    }
}

/// Anything that maps one image to another of the same shape.
pub trait Translator {
    fn translate(&self, image: &Image) -> Result<Image>;
}

impl<T: Real> Translator for Generator<T> {
    fn translate(&self, image: &Image) -> Result<Image> {
        Generator::translate(self, image)
    }
}

/// Returns its input unchanged (in model space).
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, image: &Image) -> Result<Image> {
        Ok(image.to_model())
    }
}

/// `(G(x), F(G(x)))`.
pub fn forward_cycle<T: Real>(g: &Generator<T>, f: &Generator<T>, x: &Image) -> Result<(Image, Image)> {
    let fake = g.translate(x)?;
    let rec = f.translate(&fake)?;
    Ok((fake, rec))
}
