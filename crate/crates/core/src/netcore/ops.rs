//! Differentiable building blocks: zero-padded "same" convolution in three
//! sampling modes, ReLU, sigmoid, channel concat and nearest upsampling.
//!
//! Convolutions lower to im2col + GEMM, processed in bands of output rows
//! so full-resolution images never materialize a full column matrix.

use crate::error::{Error, Result};

use super::real::{Real, Strides};
use super::tensor::Tensor;

/// Upper bound on column-matrix elements held at once.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Stride 1, output size equals input size.
    Same,
    /// Stride 2, output size `ceil(h / 2) x ceil(w / 2)`.
    Down2,
    /// Nearest-neighbour 2x upsample, then a stride-1 convolution.
    Up2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub sampling: Sampling,
    /// `out x in x k x k`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradient accumulators for one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrads<T> {
    pub fn zeros_like(conv: &Conv2d<T>) -> Self {
        ConvGrads {
            weight: vec![T::zero(); conv.weight.len()],
            bias: vec![T::zero(); conv.bias.len()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad_y: usize,
    pad_x: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize) -> Self {
        let pad = kernel / 2;
        Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            pad_y: pad,
            pad_x: pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    /// Stride-1 geometry with explicit leading pads and output equal to the
    /// input size.
    fn padded(channels: usize, height: usize, width: usize, kernel: usize, pad_y: usize, pad_x: usize) -> Self {
        Geometry {
            channels,
            height,
            width,
            kernel,
            stride: 1,
            pad_y,
            pad_x,
            out_h: height,
            out_w: width,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.out_w).max(1)).clamp(1, self.out_h)
    }

    /// Output columns `lo..hi` of one im2col row (fixed `kx`) that map
    /// inside the input.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        // ix = ox * stride + kx - pad_x must lie in 0..width.
        let lo = self.pad_x.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.width + self.pad_x > kx {
            ((self.width + self.pad_x - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad_y as isize;
        (iy >= 0 && iy < self.height as isize).then_some(iy as usize)
    }
}

/// Fills `cols` (`rows x (band * out_w)`) for output rows `oy0..oy1`.
fn im2col<T: Real>(input: &[T], g: &Geometry, oy0: usize, oy1: usize, cols: &mut [T]) {
    let band = (oy1 - oy0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * band..(row + 1) * band];
                let (lo, hi) = g.valid_cols(kx);
                for oy in oy0..oy1 {
                    let out = &mut dst[(oy - oy0) * g.out_w..(oy - oy0 + 1) * g.out_w];
                    let iy = match g.input_row(oy, ky) {
                        Some(iy) if lo < hi => iy,
                        _ => {
                            out.fill(T::zero());
                            continue;
                        }
                    };
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    let ix0 = lo * g.stride + kx - g.pad_x;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (o, ox) in (lo..hi).enumerate() {
                            out[ox] = src[ix0 + o * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `grad_input` (adjoint of [`im2col`]).
fn col2im<T: Real>(cols: &[T], g: &Geometry, oy0: usize, oy1: usize, grad_input: &mut [T]) {
    let band = (oy1 - oy0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * band..(row + 1) * band];
                let (lo, hi) = g.valid_cols(kx);
                if lo >= hi {
                    continue;
                }
                for oy in oy0..oy1 {
                    let Some(iy) = g.input_row(oy, ky) else {
                        continue;
                    };
                    let s = &src[(oy - oy0) * g.out_w..(oy - oy0 + 1) * g.out_w];
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let ix0 = lo * g.stride + kx - g.pad_x;
                    for (o, ox) in (lo..hi).enumerate() {
                        let ix = ix0 + o * g.stride;
                        dst[ix] = dst[ix] + s[ox];
                    }
                }
            }
        }
    }
}

/// Stride-1 or stride-2 convolution of one sample.
fn conv_sample<T: Real>(input: &[T], g: &Geometry, weight: &[T], bias: &[T], out: &mut [T]) {
    let out_c = bias.len();
    let plane = g.out_h * g.out_w;
    for (co, b) in bias.iter().enumerate() {
        out[co * plane..(co + 1) * plane].fill(*b);
    }
    let band_rows = g.band_rows();
    let mut cols = vec![T::zero(); g.rows() * band_rows * g.out_w];
    let mut oy0 = 0;
    while oy0 < g.out_h {
        let oy1 = (oy0 + band_rows).min(g.out_h);
        let band = (oy1 - oy0) * g.out_w;
        im2col(input, g, oy0, oy1, &mut cols);
        T::gemm(
            out_c,
            g.rows(),
            band,
            weight,
            Strides::row_major(g.rows()),
            &cols,
            Strides::row_major(band),
            T::one(),
            &mut out[oy0 * g.out_w..],
            Strides::row_major(plane),
        );
        oy0 = oy1;
    }
}

/// Accumulates weight/bias gradients and optionally the input gradient of
/// one sample.
fn conv_sample_backward<T: Real>(
    input: &[T],
    g: &Geometry,
    weight: &[T],
    grad_out: &[T],
    grads: &mut ConvGrads<T>,
    mut grad_input: Option<&mut [T]>,
) {
    let out_c = grads.bias.len();
    let plane = g.out_h * g.out_w;
    for (co, db) in grads.bias.iter_mut().enumerate() {
        *db = *db + grad_out[co * plane..(co + 1) * plane].iter().copied().sum();
    }
    let band_rows = g.band_rows();
    let mut cols = vec![T::zero(); g.rows() * band_rows * g.out_w];
    let mut grad_cols = if grad_input.is_some() {
        vec![T::zero(); cols.len()]
    } else {
        Vec::new()
    };
    let mut oy0 = 0;
    while oy0 < g.out_h {
        let oy1 = (oy0 + band_rows).min(g.out_h);
        let band = (oy1 - oy0) * g.out_w;
        let dout = &grad_out[oy0 * g.out_w..];
        im2col(input, g, oy0, oy1, &mut cols);
        // dW += dOut * cols^T
        T::gemm(
            out_c,
            band,
            g.rows(),
            dout,
            Strides::row_major(plane),
            &cols,
            Strides::transposed(band),
            T::one(),
            &mut grads.weight,
            Strides::row_major(g.rows()),
        );
        if let Some(dx) = grad_input.as_deref_mut() {
            // dCols = W^T * dOut
            T::gemm(
                g.rows(),
                out_c,
                band,
                weight,
                Strides::transposed(g.rows()),
                dout,
                Strides::row_major(plane),
                T::zero(),
                &mut grad_cols,
                Strides::row_major(band),
            );
            col2im(&grad_cols, g, oy0, oy1, dx);
        }
        oy0 = oy1;
    }
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, sampling: Sampling) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            sampling,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match self.sampling {
            Sampling::Same => (h, w),
            Sampling::Down2 => (h.div_ceil(2), w.div_ceil(2)),
            Sampling::Up2 => (2 * h, 2 * w),
        }
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        match self.sampling {
            Sampling::Same | Sampling::Up2 => Geometry::new(self.in_channels, h, w, self.kernel, 1),
            Sampling::Down2 => Geometry::new(self.in_channels, h, w, self.kernel, 2),
        }
    }

    /// `W'[c][o][k-1-ky][k-1-kx] = W[o][c][ky][kx]` with zero bias, plus the
    /// geometry of convolving the output gradient with it.
    fn flipped(&self, h: usize, w: usize) -> (Conv2d<T>, Geometry) {
        let k = self.kernel;
        let mut flip = Conv2d::zeros(self.out_channels, self.in_channels, k, Sampling::Same);
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        flip.weight[((c * self.out_channels + o) * k + k - 1 - ky) * k + k - 1 - kx] =
                            self.weight[((o * self.in_channels + c) * k + ky) * k + kx];
                    }
                }
            }
        }
        (flip, Geometry::new(self.out_channels, h, w, k, 1))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        if self.sampling == Sampling::Up2 {
            return Ok(self.forward_up2(x));
        }
        let (oh, ow) = self.output_dims(x.height(), x.width());
        let g = self.geometry(x.height(), x.width());
        let mut out = Tensor::zeros([x.n(), self.out_channels, oh, ow]);
        for i in 0..x.n() {
            conv_sample(x.sample(i), &g, &self.weight, &self.bias, out.sample_mut(i));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ConvGrads<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.check_input(x)?;
        let (oh, ow) = self.output_dims(x.height(), x.width());
        if grad_out.shape() != [x.n(), self.out_channels, oh, ow] {
            return Err(Error::Shape(format!(
                "conv output gradient {:?} does not match output [{}, {}, {oh}, {ow}]",
                grad_out.shape(),
                x.n(),
                self.out_channels
            )));
        }
        if self.sampling == Sampling::Up2 {
            return Ok(self.backward_up2(x, grad_out, grads, need_input_grad));
        }
        let g = self.geometry(x.height(), x.width());
        // Stride 1: the input gradient is a same-convolution of the output
        // gradient with the flipped, transposed kernel.
        let transposed =
            (need_input_grad && g.stride == 1 && self.in_channels >= 8).then(|| self.flipped(g.height, g.width));
        let mut grad_x = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for i in 0..x.n() {
            let scatter = match (&transposed, grad_x.as_mut()) {
                (None, Some(t)) => Some(t.sample_mut(i)),
                _ => None,
            };
            conv_sample_backward(x.sample(i), &g, &self.weight, grad_out.sample(i), grads, scatter);
            if let (Some((flip, fg)), Some(t)) = (&transposed, grad_x.as_mut()) {
                conv_sample(grad_out.sample(i), fg, &flip.weight, &flip.bias, t.sample_mut(i));
            }
        }
        Ok(grad_x)
    }

    /// Tap of the low-resolution input hit by kernel row `ky` for output
    /// phase `a`, and the leading pad of that phase.
    fn up2_tap(&self, a: usize, ky: usize) -> (usize, usize) {
        let pad = (self.kernel / 2) as isize;
        let lead = -(a as isize - pad).div_euclid(2);
        let tap = (a as isize + ky as isize - pad).div_euclid(2) + lead;
        (tap as usize, lead as usize)
    }

    fn up2_taps(&self) -> usize {
        self.kernel.div_ceil(2)
    }

    /// Upsample-then-convolve as four small convolutions of the input, one
    /// per output phase `(a, b)`, with kernel taps that read the same input
    /// pixel summed together.
    fn up2_phase_weight(&self, a: usize, b: usize) -> (Vec<T>, usize, usize) {
        let (k, t) = (self.kernel, self.up2_taps());
        let mut eff = vec![T::zero(); self.out_channels * self.in_channels * t * t];
        for oc in 0..self.out_channels * self.in_channels {
            for ky in 0..k {
                let (ty, _) = self.up2_tap(a, ky);
                for kx in 0..k {
                    let (tx, _) = self.up2_tap(b, kx);
                    let e = &mut eff[(oc * t + ty) * t + tx];
                    *e = *e + self.weight[(oc * k + ky) * k + kx];
                }
            }
        }
        (eff, self.up2_tap(a, 0).1, self.up2_tap(b, 0).1)
    }

    fn forward_up2(&self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.height(), x.width());
        let mut out = Tensor::zeros([x.n(), self.out_channels, 2 * h, 2 * w]);
        let mut phase = vec![T::zero(); self.out_channels * h * w];
        for a in 0..2 {
            for b in 0..2 {
                let (eff, pad_y, pad_x) = self.up2_phase_weight(a, b);
                let g = Geometry::padded(self.in_channels, h, w, self.up2_taps(), pad_y, pad_x);
                for i in 0..x.n() {
                    conv_sample(x.sample(i), &g, &eff, &self.bias, &mut phase);
                    let dst = out.sample_mut(i);
                    for (o, src) in phase.chunks_exact(h * w).enumerate() {
                        let plane = &mut dst[o * 4 * h * w..(o + 1) * 4 * h * w];
                        for y in 0..h {
                            let row = &mut plane[(2 * y + a) * 2 * w..(2 * y + a + 1) * 2 * w];
                            for (xi, v) in src[y * w..(y + 1) * w].iter().enumerate() {
                                row[2 * xi + b] = *v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_up2(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ConvGrads<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (h, w) = (x.height(), x.width());
        let (k, t) = (self.kernel, self.up2_taps());
        let mut grad_x = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut phase = vec![T::zero(); self.out_channels * h * w];
        for a in 0..2 {
            for b in 0..2 {
                let (eff, pad_y, pad_x) = self.up2_phase_weight(a, b);
                let g = Geometry::padded(self.in_channels, h, w, t, pad_y, pad_x);
                let mut eff_grads = ConvGrads {
                    weight: vec![T::zero(); eff.len()],
                    bias: vec![T::zero(); self.out_channels],
                };
                for i in 0..x.n() {
                    let src = grad_out.sample(i);
                    for (o, dst) in phase.chunks_exact_mut(h * w).enumerate() {
                        let plane = &src[o * 4 * h * w..(o + 1) * 4 * h * w];
                        for y in 0..h {
                            let row = &plane[(2 * y + a) * 2 * w..(2 * y + a + 1) * 2 * w];
                            for (xi, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                                *d = row[2 * xi + b];
                            }
                        }
                    }
                    let scatter = grad_x.as_mut().map(|t| t.sample_mut(i));
                    conv_sample_backward(x.sample(i), &g, &eff, &phase, &mut eff_grads, scatter);
                }
                for (db, e) in grads.bias.iter_mut().zip(&eff_grads.bias) {
                    *db = *db + *e;
                }
                for oc in 0..self.out_channels * self.in_channels {
                    for ky in 0..k {
                        let (ty, _) = self.up2_tap(a, ky);
                        for kx in 0..k {
                            let (tx, _) = self.up2_tap(b, kx);
                            let dw = &mut grads.weight[(oc * k + ky) * k + kx];
                            *dw = *dw + eff_grads.weight[(oc * t + ty) * t + tx];
                        }
                    }
                }
            }
        }
        grad_x
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        *v = v.max(T::zero());
    }
}

/// Gates `grad` by `out > 0`, where `out` is the ReLU output.
pub fn relu_backward<T: Real>(out: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        // Split by sign so exp never overflows.
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// `grad * s * (1 - s)` with `s` the sigmoid output.
pub fn sigmoid_backward<T: Real>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = grad
        .data()
        .iter()
        .zip(out.data())
        .map(|(&g, &s)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("same shape")
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.n() != b.n() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros([a.n(), a.channels() + b.channels(), a.height(), a.width()]);
    let la = a.sample_len();
    for i in 0..a.n() {
        let dst = out.sample_mut(i);
        dst[..la].copy_from_slice(a.sample(i));
        dst[la..].copy_from_slice(b.sample(i));
    }
    Ok(out)
}

/// Adjoint of [`concat_channels`]: the first `first` channels, then the rest.
pub fn split_channels<T: Real>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if first > x.channels() {
        return Err(Error::Shape(format!(
            "cannot split {} channels at {first}",
            x.channels()
        )));
    }
    let [n, c, h, w] = x.shape();
    let mut a = Tensor::zeros([n, first, h, w]);
    let mut b = Tensor::zeros([n, c - first, h, w]);
    let la = first * h * w;
    for i in 0..n {
        let s = x.sample(i);
        a.sample_mut(i).copy_from_slice(&s[..la]);
        b.sample_mut(i).copy_from_slice(&s[la..]);
    }
    Ok((a, b))
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            let row = &s[(y / 2) * w..(y / 2 + 1) * w];
            for (x2, v) in d[y * 2 * w..(y + 1) * 2 * w].iter_mut().enumerate() {
                *v = row[x2 / 2];
            }
        }
    }
    out
}

/// Sums each 2x2 block: adjoint of nearest-neighbour upsampling.
pub fn upsample2_backward<T: Real>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h2, w2] = grad.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::Shape(format!("upsampled size {h2}x{w2} is odd")));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = grad.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h2 * w2..(plane + 1) * h2 * w2];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                let o = (y / 2) * w + x / 2;
                d[o] = d[o] + s[y * w2 + x];
            }
        }
    }
    Ok(out)
}
