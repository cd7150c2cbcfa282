use dccycle_autograd::{Graph, Real, Shape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::Result;

/// Weight init standard deviation (zero-mean Gaussian); biases start at 0.
pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// One step of a feed-forward network. Parameter fields index into the
/// owning [`Network`]'s parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    ReflectPad(usize),
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// `x + body(x)`.
    Residual(Vec<Layer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
}

impl<T: Real> Network<T> {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on the graph as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        run_layers(&self.layers, g, params, x)
    }

    /// Replaces all parameter values; shapes must match.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter {} has shape {}, checkpoint holds {}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }
}

fn run_layers<T: Real>(layers: &[Layer], g: &mut Graph<T>, params: &[Var], mut x: Var) -> Result<Var> {
    for layer in layers {
        x = match *layer {
            Layer::Conv {
                weight,
                bias,
                stride,
                pad,
            } => g.conv2d(x, params[weight], Some(params[bias]), stride, pad)?,
            Layer::ConvTranspose {
                weight,
                bias,
                stride,
                pad,
                out_pad,
            } => g.conv_transpose2d(x, params[weight], Some(params[bias]), stride, pad, out_pad)?,
            Layer::ReflectPad(p) => g.reflect_pad(x, p)?,
            Layer::InstanceNorm => g.instance_norm(x, NORM_EPS),
            Layer::Relu => g.relu(x),
            Layer::LeakyRelu(s) => g.leaky_relu(x, s),
            Layer::Tanh => g.tanh(x),
            Layer::Sigmoid => g.sigmoid(x),
            Layer::Residual(ref body) => {
                let y = run_layers(body, g, params, x)?;
                g.add(x, y)?
            }
        };
    }
    Ok(x)
}

/// Builds a layer list while drawing initial weights from a seeded stream.
pub(crate) struct NetworkBuilder<'r, T> {
    rng: &'r mut ChaCha8Rng,
    params: Vec<Param<T>>,
}

impl<'r, T: Real> NetworkBuilder<'r, T> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        NetworkBuilder {
            rng,
            params: Vec::new(),
        }
    }

    fn gaussian(&mut self, name: String, shape: Shape) -> usize {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(normal.sample(self.rng)))
            .collect();
        self.push(name, Tensor::from_vec(shape, data).expect("param shape"))
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    pub fn conv(&mut self, label: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Layer {
        let weight = self.gaussian(format!("{label}.weight"), Shape::new(cout, cin, kernel, kernel));
        let bias = self.push(format!("{label}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1)));
        Layer::Conv {
            weight,
            bias,
            stride,
            pad,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose(
        &mut self,
        label: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Layer {
        let weight = self.gaussian(format!("{label}.weight"), Shape::new(cin, cout, kernel, kernel));
        let bias = self.push(format!("{label}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1)));
        Layer::ConvTranspose {
            weight,
            bias,
            stride,
            pad,
            out_pad,
        }
    }

    pub fn finish(self, layers: Vec<Layer>) -> Network<T> {
        Network {
            layers,
            params: self.params,
        }
    }
}

/// Mixes a master seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

