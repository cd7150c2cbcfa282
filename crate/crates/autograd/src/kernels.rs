//! Dense kernels behind the graph operations. Everything here is a plain
//! function of its inputs; the graph owns bookkeeping.

use crate::real::matmul;
use crate::{GraphError, Real, Result, Shape, Tensor};

/// Sliding-window geometry of one image against a square kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(
        op: &'static str,
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(GraphError::Geometry {
                op,
                detail: "kernel and stride must be positive".into(),
            });
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel {
            return Err(GraphError::Geometry {
                op,
                detail: format!(
                    "kernel {kernel} does not fit a {height}x{width} input with padding {pad}"
                ),
            });
        }
        Ok(Window {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

impl Window {
    /// Output columns `lo..hi` whose input column `ow * stride + kj - pad`
    /// lands inside the image, and the input column of `lo`.
    fn valid_cols(&self, kj: usize) -> (usize, usize, usize) {
        let shift = kj as isize - self.pad as isize;
        let lo = if shift >= 0 { 0 } else { (-shift) as usize }.div_ceil(self.stride);
        let last = self.width as isize - 1 - shift;
        let hi = if last < 0 { 0 } else { (last as usize / self.stride + 1).min(self.out_w) };
        let lo = lo.min(hi);
        let start = (lo * self.stride) as isize + shift;
        (lo, hi, start.max(0) as usize)
    }
}

fn im2col<T: Real>(g: &Window, img: &[T], cols: &mut [T]) {
    let k = g.kernel;
    let plane = g.height * g.width;
    let ohw = g.col_cols();
    for c in 0..g.channels {
        let src_plane = &img[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ohw;
                let (lo, hi, start) = g.valid_cols(kj);
                for oh in 0..g.out_h {
                    let dst = &mut cols[row + oh * g.out_w..row + (oh + 1) * g.out_w];
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &src_plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto the image: the adjoint of `im2col`.
fn col2im<T: Real>(g: &Window, cols: &[T], img: &mut [T]) {
    let k = g.kernel;
    let plane = g.height * g.width;
    let ohw = g.col_cols();
    for c in 0..g.channels {
        let dst_plane = &mut img[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ohw;
                let (lo, hi, start) = g.valid_cols(kj);
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let src = &cols[row + oh * g.out_w + lo..row + oh * g.out_w + hi];
                    let dst = &mut dst_plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(g.stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let expect = Shape::new(channels, 1, 1, 1);
        if b.shape() != expect {
            return Err(GraphError::ShapeMismatch {
                op,
                left: expect,
                right: b.shape(),
            });
        }
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let s = out.shape();
    let plane = s.plane();
    let b = bias.data();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let v = b[i % s.c];
        chunk.iter_mut().for_each(|x| *x += v);
    }
}

fn bias_grad<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let s = dout.shape();
    let mut db = vec![T::zero(); s.c];
    for (i, chunk) in dout.data().chunks(s.plane()).enumerate() {
        db[i % s.c] += chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(Shape::new(s.c, 1, 1, 1), db).expect("bias shape")
}

pub(crate) fn conv2d_window<T: Real>(
    x: Shape,
    w: Shape,
    stride: usize,
    pad: usize,
) -> Result<Window> {
    if w.c != x.c || w.h != w.w {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d",
            left: x,
            right: w,
        });
    }
    Window::new("conv2d", x.c, x.h, x.w, w.h, stride, pad)
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let g = conv2d_window::<T>(xs, ws, stride, pad)?;
    check_bias("conv2d", bias, ws.n)?;
    let out_shape = Shape::new(xs.n, ws.n, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let (in_len, out_len) = (xs.sample(), out_shape.sample());
    for n in 0..xs.n {
        im2col(&g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        matmul(
            ws.n,
            g.col_rows(),
            g.col_cols(),
            w.data(),
            false,
            &cols,
            false,
            &mut out.data_mut()[n * out_len..(n + 1) * out_len],
            false,
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let g = conv2d_window::<T>(xs, ws, stride, pad).expect("validated in forward");
    let os = dout.shape();
    let (in_len, out_len) = (xs.sample(), os.sample());
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for n in 0..xs.n {
        let dout_n = &dout.data()[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(&g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
            matmul(
                ws.n,
                g.col_cols(),
                g.col_rows(),
                dout_n,
                false,
                &cols,
                true,
                dw.data_mut(),
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            matmul(
                g.col_rows(),
                ws.n,
                g.col_cols(),
                w.data(),
                true,
                dout_n,
                false,
                &mut cols,
                false,
            );
            col2im(&g, &cols, &mut dx.data_mut()[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads {
        dx,
        dw,
        db: need_db.then(|| bias_grad(dout)),
    }
}

/// Geometry of a transposed convolution, expressed as the forward
/// convolution it is the adjoint of (output plane plays the image role).
pub(crate) fn conv_transpose2d_window(
    x: Shape,
    w: Shape,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Window> {
    if w.n != x.c || w.h != w.w {
        return Err(GraphError::ShapeMismatch {
            op: "conv_transpose2d",
            left: x,
            right: w,
        });
    }
    if out_pad >= stride.max(1) {
        return Err(GraphError::Geometry {
            op: "conv_transpose2d",
            detail: format!("output padding {out_pad} must be smaller than stride {stride}"),
        });
    }
    let k = w.h;
    let span = |len: usize| -> Result<usize> {
        ((len.saturating_sub(1)) * stride + k + out_pad)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| GraphError::Geometry {
                op: "conv_transpose2d",
                detail: format!("padding {pad} too large for kernel {k}"),
            })
    };
    let (oh, ow) = (span(x.h)?, span(x.w)?);
    let g = Window::new("conv_transpose2d", w.c, oh, ow, k, stride, pad)?;
    if g.out_h != x.h || g.out_w != x.w {
        return Err(GraphError::Geometry {
            op: "conv_transpose2d",
            detail: format!("inconsistent geometry for {}x{} input", x.h, x.w),
        });
    }
    Ok(g)
}

pub(crate) fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let g = conv_transpose2d_window(xs, ws, stride, pad, out_pad)?;
    check_bias("conv_transpose2d", bias, ws.c)?;
    let out_shape = Shape::new(xs.n, ws.c, g.height, g.width);
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let (in_len, out_len) = (xs.sample(), out_shape.sample());
    for n in 0..xs.n {
        matmul(
            g.col_rows(),
            xs.c,
            g.col_cols(),
            w.data(),
            true,
            &x.data()[n * in_len..(n + 1) * in_len],
            false,
            &mut cols,
            false,
        );
        col2im(&g, &cols, &mut out.data_mut()[n * out_len..(n + 1) * out_len]);
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let g = conv_transpose2d_window(xs, ws, stride, pad, out_pad).expect("validated in forward");
    let (in_len, out_len) = (xs.sample(), dout.shape().sample());
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    if need_dx || need_dw {
        for n in 0..xs.n {
            im2col(&g, &dout.data()[n * out_len..(n + 1) * out_len], &mut cols);
            if let Some(dx) = dx.as_mut() {
                matmul(
                    xs.c,
                    g.col_rows(),
                    g.col_cols(),
                    w.data(),
                    false,
                    &cols,
                    false,
                    &mut dx.data_mut()[n * in_len..(n + 1) * in_len],
                    false,
                );
            }
            if let Some(dw) = dw.as_mut() {
                matmul(
                    xs.c,
                    g.col_cols(),
                    g.col_rows(),
                    &x.data()[n * in_len..(n + 1) * in_len],
                    false,
                    &cols,
                    true,
                    dw.data_mut(),
                    true,
                );
            }
        }
    }
    ConvGrads {
        dx,
        dw,
        db: need_db.then(|| bias_grad(dout)),
    }
}

fn reflect(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let r = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    r as usize
}

pub(crate) fn reflect_pad_forward<T: Real>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if pad >= s.h || pad >= s.w {
        return Err(GraphError::Geometry {
            op: "reflect_pad",
            detail: format!("padding {pad} needs an input larger than {}x{}", s.h, s.w),
        });
    }
    let (oh, ow) = (s.h + 2 * pad, s.w + 2 * pad);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..s.n * s.c {
        for i in 0..oh {
            let si = reflect(i as isize - pad as isize, s.h);
            for j in 0..ow {
                let sj = reflect(j as isize - pad as isize, s.w);
                dst[p * oh * ow + i * ow + j] = src[p * s.h * s.w + si * s.w + sj];
            }
        }
    }
    Ok(out)
}

pub(crate) fn reflect_pad_backward<T: Real>(x_shape: Shape, dout: &Tensor<T>, pad: usize) -> Tensor<T> {
    let s = x_shape;
    let (oh, ow) = (s.h + 2 * pad, s.w + 2 * pad);
    let mut dx = Tensor::zeros(s);
    let src = dout.data();
    let dst = dx.data_mut();
    for p in 0..s.n * s.c {
        for i in 0..oh {
            let si = reflect(i as isize - pad as isize, s.h);
            for j in 0..ow {
                let sj = reflect(j as isize - pad as isize, s.w);
                dst[p * s.h * s.w + si * s.w + sj] += src[p * oh * ow + i * ow + j];
            }
        }
    }
    dx
}

/// Per-(sample, channel) normalization. Returns the output and the inverse
/// standard deviation of every plane.
pub(crate) fn instance_norm_forward<T: Real>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let s = x.shape();
    let plane = s.plane();
    let count = T::from_usize(plane).expect("plane size");
    let mut out = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for (src, dst) in x.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

pub(crate) fn instance_norm_backward<T: Real>(y: &Tensor<T>, inv_std: &[T], dout: &Tensor<T>) -> Tensor<T> {
    let s = y.shape();
    let plane = s.plane();
    let count = T::from_usize(plane).expect("plane size");
    let mut dx = Tensor::zeros(s);
    for (((yp, gp), dp), &inv) in y
        .data()
        .chunks(plane)
        .zip(dout.data().chunks(plane))
        .zip(dx.data_mut().chunks_mut(plane))
        .zip(inv_std)
    {
        let mean_g = gp.iter().copied().sum::<T>() / count;
        let mean_gy = gp.iter().zip(yp).map(|(&g, &y)| g * y).sum::<T>() / count;
        for ((d, &g), &y) in dp.iter_mut().zip(gp).zip(yp) {
            *d = inv * (g - mean_g - y * mean_gy);
        }
    }
    dx
}
