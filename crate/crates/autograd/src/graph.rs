use crate::kernels;
use crate::{GraphError, Real, Result, Shape, Tensor};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Square(Var),
    Abs(Var),
    Log(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Mean(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of tensor operations supporting one reverse pass per build.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Copies a node's value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Fractionally strided convolution; weight layout is `[in, out, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let value = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
            out_pad,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
                out_pad,
            },
            rg,
        ))
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let value = kernels::reflect_pad_forward(self.value(x), pad)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ReflectPad { x, pad }, rg))
    }

    /// Normalizes every (sample, channel) plane to zero mean and unit
    /// variance; `eps` is added to the biased variance.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (value, inv_std) = kernels::instance_norm_forward(self.value(x), T::from_f64_lossy(eps));
        let rg = self.rg(x);
        self.push(value, Op::InstanceNorm { x, inv_std }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through
        self.unary(x, |v| if v < T::zero() { T::zero() } else { v }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu(x, s),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(x, move |v| a * v + b, Op::Affine { x, scale: a })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// Gradient passes where `lo <= x <= hi`. NaN stays NaN.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(
            x,
            move |v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            },
            Op::Clamp { x, lo, hi },
        )
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(GraphError::ShapeMismatch {
                op: name,
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize(v.len()).expect("length");
        let value = Tensor::scalar(v.data().iter().copied().sum::<T>() / n);
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().copied().sum::<T>());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar node. Gradients are kept for leaves only.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape::SCALAR {
            return Err(GraphError::NotScalar(shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                self.grads[i] = Some(gout);
                continue;
            }
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut self.grads,
            };
            acc.propagate(&node.op, &node.value, gout);
        }
        Ok(())
    }
}

struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Real> Accumulator<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Elementwise chain rule: `dx = f(gout, x, y)` with `y` the node output.
    fn pointwise(&mut self, x: Var, gout: &Tensor<T>, out: &Tensor<T>, f: impl Fn(T, T, T) -> T) {
        if !self.wants(x) {
            return;
        }
        let xs = self.val(x);
        let data = gout
            .data()
            .iter()
            .zip(xs.data())
            .zip(out.data())
            .map(|((&g, &xv), &yv)| f(g, xv, yv))
            .collect();
        let dx = Tensor::from_vec(xs.shape(), data).expect("pointwise shape");
        self.add(x, dx);
    }

    fn propagate(&mut self, op: &Op<T>, out: &Tensor<T>, gout: Tensor<T>) {
        let zero = T::zero();
        let one = T::one();
        match *op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Conv2d { x, w, b, stride, pad } => {
                let grads = kernels::conv2d_backward(
                    self.val(x),
                    self.val(w),
                    &gout,
                    stride,
                    pad,
                    self.wants(x),
                    self.wants(w),
                    b.is_some_and(|b| self.wants(b)),
                );
                self.add_conv(x, w, b, grads);
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
                out_pad,
            } => {
                let grads = kernels::conv_transpose2d_backward(
                    self.val(x),
                    self.val(w),
                    &gout,
                    stride,
                    pad,
                    out_pad,
                    self.wants(x),
                    self.wants(w),
                    b.is_some_and(|b| self.wants(b)),
                );
                self.add_conv(x, w, b, grads);
            }
            Op::ReflectPad { x, pad } => {
                if self.wants(x) {
                    let dx = kernels::reflect_pad_backward(self.val(x).shape(), &gout, pad);
                    self.add(x, dx);
                }
            }
            Op::InstanceNorm { x, ref inv_std } => {
                if self.wants(x) {
                    let dx = kernels::instance_norm_backward(out, inv_std, &gout);
                    self.add(x, dx);
                }
            }
            Op::Relu(x) => self.pointwise(x, &gout, out, |g, v, _| if v > zero { g } else { zero }),
            Op::LeakyRelu(x, s) => {
                self.pointwise(x, &gout, out, |g, v, _| if v > zero { g } else { g * s })
            }
            Op::Tanh(x) => self.pointwise(x, &gout, out, |g, _, y| g * (one - y * y)),
            Op::Sigmoid(x) => self.pointwise(x, &gout, out, |g, _, y| g * y * (one - y)),
            Op::Affine { x, scale } => self.pointwise(x, &gout, out, |g, _, _| g * scale),
            Op::Square(x) => {
                let two = one + one;
                self.pointwise(x, &gout, out, |g, v, _| g * two * v)
            }
            Op::Abs(x) => self.pointwise(x, &gout, out, |g, v, _| {
                if v > zero {
                    g
                } else if v < zero {
                    -g
                } else {
                    zero
                }
            }),
            Op::Log(x) => self.pointwise(x, &gout, out, |g, v, _| g / v),
            Op::Clamp { x, lo, hi } => {
                self.pointwise(x, &gout, out, |g, v, _| if v >= lo && v <= hi { g } else { zero })
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    self.add(a, gout.clone());
                }
                self.add(b, gout);
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    self.add(a, gout.clone());
                }
                if self.wants(b) {
                    self.add(b, gout.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.val(b).clone();
                    self.pointwise(a, &gout, &bv, |g, _, y| g * y);
                }
                if self.wants(b) {
                    let av = self.val(a).clone();
                    self.pointwise(b, &gout, &av, |g, _, x| g * x);
                }
            }
            Op::Div(a, b) => {
                if self.wants(a) {
                    let bv = self.val(b).clone();
                    self.pointwise(a, &gout, &bv, |g, _, d| g / d);
                }
                if self.wants(b) {
                    let av = self.val(a).clone();
                    self.pointwise(b, &gout, &av, |g, d, n| -g * n / (d * d));
                }
            }
            Op::Mean(x) => {
                if self.wants(x) {
                    let s = self.val(x).shape();
                    let n = T::from_usize(s.numel()).expect("length");
                    self.add(x, Tensor::full(s, gout.item() / n));
                }
            }
            Op::Sum(x) => {
                if self.wants(x) {
                    let s = self.val(x).shape();
                    self.add(x, Tensor::full(s, gout.item()));
                }
            }
        }
    }

    fn add_conv(&mut self, x: Var, w: Var, b: Option<Var>, grads: kernels::ConvGrads<T>) {
        if let Some(dx) = grads.dx {
            self.add(x, dx);
        }
        if let Some(dw) = grads.dw {
            self.add(w, dw);
        }
        if let (Some(b), Some(db)) = (b, grads.db) {
            self.add(b, db);
        }
    }
}
