//! Forward kernels against naive loop references, and every op's backward
//! against central finite differences at 64-bit.

use dccycle_autograd::{Adam, Graph, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..xs.c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ih = (i * stride + ki) as isize - pad as isize;
                                let iw = (j * stride + kj) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= xs.h as isize || iw >= xs.w as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * xs.c + c) * xs.h + ih as usize) * xs.w + iw as usize];
                                let wv = w.data()[((o * ws.c + c) * k + ki) * k + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[((n * ws.n + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution, weight `[in, out, k, k]`.
fn naive_conv_t(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, out_pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h - 1) * stride + k + out_pad - 2 * pad;
    let ow = (xs.w - 1) * stride + k + out_pad - 2 * pad;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.c, oh, ow));
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let xv = x.data()[((n * xs.c + c) * xs.h + i) * xs.w + j];
                    for o in 0..ws.c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let y = (i * stride + ki) as isize - pad as isize;
                                let z = (j * stride + kj) as isize - pad as isize;
                                if y < 0 || z < 0 || y >= oh as isize || z >= ow as isize {
                                    continue;
                                }
                                let wv = w.data()[((c * ws.c + o) * k + ki) * k + kj];
                                out.data_mut()[((n * ws.c + o) * oh + y as usize) * ow + z as usize] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(stride, pad, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 1, 3), (1, 3, 7)] {
        let x = random(Shape::new(2, 3, 9, 8), &mut rng);
        let w = random(Shape::new(4, 3, k, k), &mut rng);
        let b = random(Shape::new(4, 1, 1, 1), &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        assert_close(g.value(y), &naive_conv(&x, &w, &b, stride, pad), 1e-12);
    }
}

#[test]
fn conv_transpose2d_matches_scatter_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(2, 3, 4, 5), &mut rng);
    let w = random(Shape::new(3, 2, 3, 3), &mut rng);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv_transpose2d(xv, wv, None, 2, 1, 1).unwrap();
    assert_eq!(g.shape(y), Shape::new(2, 2, 8, 10));
    assert_close(g.value(y), &naive_conv_t(&x, &w, 2, 1, 1), 1e-12);
}

#[test]
fn geometry_errors_are_reported() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
    let w = g.constant(Tensor::zeros(Shape::new(1, 1, 5, 5)));
    assert!(g.conv2d(x, w, None, 1, 0).is_err());
    assert!(g.reflect_pad(x, 2).is_err());
    let w2 = g.constant(Tensor::zeros(Shape::new(1, 2, 3, 3)));
    assert!(g.conv2d(x, w2, None, 1, 1).is_err());
    let a = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 3)));
    assert!(g.add(x, a).is_err());
    assert!(g.backward(x).is_err());
}

#[test]
fn reflect_pad_mirrors_without_repeating_edge() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap());
    // height 1 cannot be reflected; use a 3x3 plane instead
    assert!(g.reflect_pad(x, 1).is_err());
    let x = g.constant(Tensor::from_vec(Shape::new(1, 1, 3, 3), (1..=9).map(f64::from).collect()).unwrap());
    let y = g.reflect_pad(x, 1).unwrap();
    assert_eq!(&g.value(y).data()[..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
}

#[test]
fn instance_norm_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(Shape::new(2, 3, 8, 8), &mut rng).map(|v| 3.0 * v + 2.0));
    let y = g.instance_norm(x, 1e-5);
    for plane in g.value(y).data().chunks(64) {
        let mean = plane.iter().sum::<f64>() / 64.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

/// Central-difference check of d(sum(w * f(inputs)))/d(inputs) where `w` is
/// a fixed random projection so that every output element matters.
fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars);
        g.shape(y)
    };
    let probe = random(probe_shape, &mut rng);
    let loss = |g: &mut Graph<f64>, vars: &[Var]| {
        let y = build(g, vars);
        let p = g.constant(probe.clone());
        let m = g.mul(y, p).unwrap();
        g.sum(m)
    };
    let mut g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = loss(&mut g, &vars);
    g.backward(l).unwrap();
    let h = 1e-6;
    for (which, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[which]).expect("grad").clone();
        for idx in 0..t.len() {
            let eval = |delta: f64| {
                let mut g = Graph::new();
                let vars: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let mut t = t.clone();
                        if i == which {
                            t.data_mut()[idx] += delta;
                        }
                        g.constant(t)
                    })
                    .collect();
                let l = loss(&mut g, &vars);
                g.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-5,
                "input {which}[{idx}]: analytic {a} numeric {numeric}"
            );
        }
    }
}

#[test]
fn gradients_conv_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(Shape::new(2, 2, 6, 6), &mut rng);
    let w = random(Shape::new(3, 2, 3, 3), &mut rng);
    let b = random(Shape::new(3, 1, 1, 1), &mut rng);
    check(&[x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap());
    check(&[x.clone(), w.clone()], |g, v| g.conv2d(v[0], v[1], None, 1, 0).unwrap());
    let wt = random(Shape::new(2, 3, 3, 3), &mut rng);
    check(&[x.clone(), wt, b], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1).unwrap());
    check(&[x], |g, v| g.reflect_pad(v[0], 2).unwrap());
}

#[test]
fn single_channel_convs_match_reference_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(Shape::new(2, 3, 7, 7), &mut rng);
    let w = random(Shape::new(1, 3, 3, 3), &mut rng);
    let b = random(Shape::new(1, 1, 1, 1), &mut rng);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, wv, Some(bv), 1, 1).unwrap();
    assert_close(g.value(y), &naive_conv(&x, &w, &b, 1, 1), 1e-12);
    check(&[x.clone(), w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap());
    let x1 = random(Shape::new(2, 1, 5, 5), &mut rng);
    let w1 = random(Shape::new(4, 1, 1, 1), &mut rng);
    check(&[x1, w1], |g, v| g.conv2d(v[0], v[1], None, 1, 0).unwrap());
}

#[test]
fn gradients_normalization_and_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(Shape::new(2, 2, 4, 4), &mut rng);
    check(&[x.clone()], |g, v| g.instance_norm(v[0], 1e-5));
    check(&[x.clone()], |g, v| g.tanh(v[0]));
    check(&[x.clone()], |g, v| g.sigmoid(v[0]));
    check(&[x.clone()], |g, v| g.leaky_relu(v[0], 0.2));
    check(&[x.clone()], |g, v| g.relu(v[0]));
    check(&[x.clone()], |g, v| g.abs(v[0]));
    check(&[x.clone()], |g, v| g.square(v[0]));
    check(&[x.clone()], |g, v| g.affine(v[0], -0.5, 0.5));
    check(&[x.clone()], |g, v| g.clamp(v[0], -0.5, 0.5));
    check(&[x.map(|v| v.abs() + 0.5)], |g, v| g.log(v[0]));
    check(&[x.clone()], |g, v| g.mean(v[0]));
}

#[test]
fn gradients_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(Shape::new(1, 2, 3, 3), &mut rng);
    let b = random(Shape::new(1, 2, 3, 3), &mut rng).map(|v| v.abs() + 0.5);
    check(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], |g, v| g.div(v[0], v[1]).unwrap());
    // a node reused twice accumulates both contributions
    check(&[a], |g, v| g.mul(v[0], v[0]).unwrap());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 2.0));
    let p = g.param(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
    let m = g.mul(c, p).unwrap();
    let l = g.sum(m);
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap().data(), &[2.0; 4]);
    let d = g.detach(m);
    assert!(!g.requires_grad(d));
}

#[test]
fn adam_zero_learning_rate_is_a_no_op() {
    let mut p = vec![Tensor::<f32>::full(Shape::new(1, 1, 1, 3), 0.25)];
    let grad = Tensor::full(Shape::new(1, 1, 1, 3), -1.5);
    let mut opt = Adam::new(p.iter(), 0.5, 0.999);
    opt.step(p.iter_mut(), &[Some(&grad)], 0.0);
    assert_eq!(p[0].data(), &[0.25; 3]);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // with bias correction the first update is lr * g / (|g| + eps')
    let mut p = vec![Tensor::<f64>::full(Shape::new(1, 1, 1, 2), 1.0)];
    let grad = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.3, -2.0]).unwrap();
    let mut opt = Adam::new(p.iter(), 0.5, 0.999);
    opt.step(p.iter_mut(), &[Some(&grad)], 0.1);
    assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
    assert!((p[0].data()[1] - 1.1).abs() < 1e-6);
}

#[test]
fn relu_and_clamp_keep_nan() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![f64::NAN, -2.0, 3.0]).unwrap());
    let r = g.relu(x);
    assert!(g.value(r).data()[0].is_nan());
    assert_eq!(&g.value(r).data()[1..], &[0.0, 3.0]);
    let c = g.clamp(x, 0.0, 1.0);
    assert!(g.value(c).data()[0].is_nan());
    assert_eq!(&g.value(c).data()[1..], &[0.0, 1.0]);
}
