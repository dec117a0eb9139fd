//! Forward and backward kernels: 3x3 same convolution, batch normalization
//! and ReLU.

use crate::error::{CnnError, Result};
use crate::tensor::{Real, Tensor};

pub const KERNEL: usize = 3;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics in batch normalization.
    Infer,
}

/// Index into a `[3][3][c_in][c_out]` kernel.
#[inline]
pub fn kernel_index(di: usize, dj: usize, c: usize, o: usize, c_in: usize, c_out: usize) -> usize {
    ((di * KERNEL + dj) * c_in + c) * c_out + o
}

fn check_conv<T: Real>(x: &Tensor<T>, kernel: &[T], bias: &[T]) -> Result<(usize, usize)> {
    let c_in = x.channels();
    let c_out = bias.len();
    if kernel.len() != KERNEL * KERNEL * c_in * c_out {
        return Err(CnnError::ShapeMismatch(format!(
            "kernel has {} values, expected 3x3x{c_in}x{c_out}",
            kernel.len()
        )));
    }
    Ok((c_in, c_out))
}

/// Output channels handled per register tile.
const TILE: usize = 8;

/// Copy of `x` with a one-pixel zero border, `(n, h + 2, w + 2, c)`.
fn pad<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let [n, h, w, c] = x.dims();
    let (hp, wp) = (h + 2, w + 2);
    let mut out = vec![T::zero(); n * hp * wp * c];
    let xs = x.as_slice();
    for b in 0..n {
        for i in 0..h {
            let src = ((b * h + i) * w) * c;
            let dst = ((b * hp + i + 1) * wp + 1) * c;
            out[dst..dst + w * c].copy_from_slice(&xs[src..src + w * c]);
        }
    }
    out
}

/// Accumulates output channels `o0..o0 + CO` of a same convolution into `ys`
/// from the padded input `xp`.
fn conv_tile<T: Real, const CO: usize>(xp: &[T], dims: [usize; 4], kernel: &[T], bias: &[T], o0: usize, ys: &mut [T]) {
    let [n, h, w, c_in] = dims;
    let (hp, wp) = (h + 2, w + 2);
    let c_out = bias.len();
    // Tile weights gathered as [tap][c][CO].
    let mut kt = vec![T::zero(); KERNEL * KERNEL * c_in * CO];
    for (t, row) in kt.chunks_exact_mut(CO).enumerate() {
        row.copy_from_slice(&kernel[t * c_out + o0..t * c_out + o0 + CO]);
    }
    let span = KERNEL * c_in;
    let mut out_at = 0;
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut acc = [T::zero(); CO];
                acc.copy_from_slice(&bias[o0..o0 + CO]);
                for di in 0..KERNEL {
                    let start = ((b * hp + i + di) * wp + j) * c_in;
                    let xin = &xp[start..start + span];
                    let taps = &kt[di * span * CO..(di + 1) * span * CO];
                    for (&xv, row) in xin.iter().zip(taps.chunks_exact(CO)) {
                        for o in 0..CO {
                            acc[o] += xv * row[o];
                        }
                    }
                }
                ys[out_at + o0..out_at + o0 + CO].copy_from_slice(&acc);
                out_at += c_out;
            }
        }
    }
}

/// Kernel gradient contribution of output channels `o0..o0 + CO` from the
/// padded input `xp`.
fn kernel_grad_tile<T: Real, const CO: usize>(xp: &[T], dims: [usize; 4], grad_out: &[T], c_out: usize, o0: usize, gk: &mut [T]) {
    let [_, h, w, c_in] = dims;
    let (hp, wp) = (h + 2, w + 2);
    for di in 0..KERNEL {
        for dj in 0..KERNEL {
            for c in 0..c_in {
                let mut acc = [T::zero(); CO];
                for (row, grow) in grad_out.chunks_exact(w * c_out).enumerate() {
                    let (b, i) = (row / h, row % h);
                    let base = ((b * hp + i + di) * wp + dj) * c_in + c;
                    let xrow = &xp[base..base + (w - 1) * c_in + 1];
                    for (&xv, g) in xrow.iter().step_by(c_in).zip(grow.chunks_exact(c_out)) {
                        let g: &[T; CO] = g[o0..o0 + CO].try_into().expect("tile width");
                        for o in 0..CO {
                            acc[o] += xv * g[o];
                        }
                    }
                }
                let k_at = kernel_index(di, dj, c, o0, c_in, c_out);
                gk[k_at..k_at + CO].copy_from_slice(&acc);
            }
        }
    }
}

/// Calls `f(o0, width)` over register tiles covering `c_out` channels.
fn for_tiles(c_out: usize, mut f: impl FnMut(usize, usize)) {
    let mut o0 = 0;
    while o0 < c_out {
        let width = (c_out - o0).min(TILE);
        f(o0, width);
        o0 += width;
    }
}

macro_rules! dispatch_tile {
    ($width:expr, $f:ident, $($arg:expr),*) => {
        match $width {
            1 => $f::<T, 1>($($arg),*),
            2 => $f::<T, 2>($($arg),*),
            3 => $f::<T, 3>($($arg),*),
            4 => $f::<T, 4>($($arg),*),
            5 => $f::<T, 5>($($arg),*),
            6 => $f::<T, 6>($($arg),*),
            7 => $f::<T, 7>($($arg),*),
            _ => $f::<T, 8>($($arg),*),
        }
    };
}

/// Stride-1 3x3 convolution with zero padding 1.
pub fn conv2d_same<T: Real>(x: &Tensor<T>, kernel: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let (_, c_out) = check_conv(x, kernel, bias)?;
    let [n, h, w, _] = x.dims();
    let mut y = Tensor::zeros([n, h, w, c_out]);
    let ys = y.as_mut_slice();
    let xp = pad(x);
    let dims = x.dims();
    for_tiles(c_out, |o0, width| dispatch_tile!(width, conv_tile, &xp, dims, kernel, bias, o0, ys));
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// Gradient with respect to the layer input, when requested.
    pub input: Option<Tensor<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d_same`] given the layer input and the gradient of
/// the loss with respect to its output.
pub fn conv2d_backward<T: Real>(x: &Tensor<T>, kernel: &[T], grad_out: &Tensor<T>, need_input: bool) -> Result<ConvGrads<T>> {
    let [n, h, w, c_in] = x.dims();
    let c_out = grad_out.channels();
    if grad_out.dims() != [n, h, w, c_out] || kernel.len() != KERNEL * KERNEL * c_in * c_out {
        return Err(CnnError::ShapeMismatch(format!(
            "conv backward: input {:?}, grad {:?}, kernel {}",
            x.dims(),
            grad_out.dims(),
            kernel.len()
        )));
    }
    let gs = grad_out.as_slice();
    let mut gb = vec![T::zero(); c_out];
    for g in gs.chunks_exact(c_out) {
        for (acc, v) in gb.iter_mut().zip(g) {
            *acc += *v;
        }
    }
    let mut gk = vec![T::zero(); kernel.len()];
    let xp = pad(x);
    let dims = x.dims();
    for_tiles(c_out, |o0, width| dispatch_tile!(width, kernel_grad_tile, &xp, dims, gs, c_out, o0, &mut gk));
    // The input gradient is a same convolution of the output gradient with
    // the spatially flipped kernel, input and output channels swapped.
    let gx = if need_input {
        let mut flipped = vec![T::zero(); kernel.len()];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                for c in 0..c_in {
                    for o in 0..c_out {
                        flipped[kernel_index(di, dj, o, c, c_out, c_in)] = kernel[kernel_index(KERNEL - 1 - di, KERNEL - 1 - dj, c, o, c_in, c_out)];
                    }
                }
            }
        }
        Some(conv2d_same(grad_out, &flipped, &vec![T::zero(); c_in])?)
    } else {
        None
    };
    Ok(ConvGrads { input: gx, kernel: gk, bias: gb })
}

/// Per-channel affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, mean: &[T], var: &[T]) {
        let mo = T::lit(BN_MOMENTUM);
        let rest = T::one() - mo;
        for c in 0..self.channels() {
            self.running_mean[c] = mo * self.running_mean[c] + rest * mean[c];
            self.running_var[c] = mo * self.running_var[c] + rest * var[c];
        }
    }
}

/// Values kept from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub batch_var: Vec<T>,
}

/// Normalizes per channel over (batch, height, width). Running statistics
/// are left untouched; see [`batch_norm`] for the updating variant.
pub fn batch_norm_forward<T: Real>(x: &Tensor<T>, p: &BatchNormParams<T>, mode: Mode) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    let c = x.channels();
    if p.channels() != c {
        return Err(CnnError::ShapeMismatch(format!("batch norm has {} channels, input {c}", p.channels())));
    }
    let eps = T::lit(BN_EPSILON);
    let count = T::from_usize(x.as_slice().len() / c.max(1)).expect("count");
    let (mean, var) = match mode {
        Mode::Infer => (p.running_mean.clone(), p.running_var.clone()),
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            for px in x.as_slice().chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += *v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![T::zero(); c];
            for px in x.as_slice().chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (*v - *m) * (*v - *m);
                }
            }
            var.iter_mut().for_each(|s| *s /= count);
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for (xh, yv) in x_hat.as_mut_slice().chunks_exact_mut(c).zip(y.as_mut_slice().chunks_exact_mut(c)) {
        for ((((a, b), m), s), (g, be)) in xh.iter_mut().zip(yv.iter_mut()).zip(&mean).zip(&inv_std).zip(p.gamma.iter().zip(&p.beta)) {
            *a = (*a - *m) * *s;
            *b = *g * *a + *be;
        }
    }
    let cache = (mode == Mode::Train).then_some(BnCache { x_hat, inv_std, batch_mean: mean, batch_var: var });
    Ok((y, cache))
}

/// Batch normalization; train mode also updates the running statistics.
pub fn batch_norm<T: Real>(x: &Tensor<T>, p: &mut BatchNormParams<T>, mode: Mode) -> Result<Tensor<T>> {
    let (y, cache) = batch_norm_forward(x, p, mode)?;
    if let Some(cache) = cache {
        p.update_running(&cache.batch_mean, &cache.batch_var);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass through train-mode batch normalization, including the
/// dependence of the batch statistics on the input.
pub fn batch_norm_backward<T: Real>(grad_out: &Tensor<T>, gamma: &[T], cache: &BnCache<T>) -> Result<BnGrads<T>> {
    let c = gamma.len();
    if grad_out.dims() != cache.x_hat.dims() || grad_out.channels() != c {
        return Err(CnnError::ShapeMismatch("batch norm backward".into()));
    }
    let count = T::from_usize(grad_out.as_slice().len() / c).expect("count");
    let mut g_gamma = vec![T::zero(); c];
    let mut g_beta = vec![T::zero(); c];
    for (g, xh) in grad_out.as_slice().chunks_exact(c).zip(cache.x_hat.as_slice().chunks_exact(c)) {
        for (((gg, gb), gv), xv) in g_gamma.iter_mut().zip(g_beta.iter_mut()).zip(g).zip(xh) {
            *gb += *gv;
            *gg += *gv * *xv;
        }
    }
    // dx = γ/(N σ) (N dy − Σdy − x̂ Σ(dy x̂))
    let scale: Vec<T> = gamma.iter().zip(&cache.inv_std).map(|(g, s)| *g * *s / count).collect();
    let mut gx = grad_out.clone();
    for (g, xh) in gx.as_mut_slice().chunks_exact_mut(c).zip(cache.x_hat.as_slice().chunks_exact(c)) {
        for ((((gv, xv), sc), gb), gg) in g.iter_mut().zip(xh).zip(&scale).zip(&g_beta).zip(&g_gamma) {
            *gv = *sc * (count * *gv - *gb - *xv * *gg);
        }
    }
    Ok(BnGrads { input: gx, gamma: g_gamma, beta: g_beta })
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in x.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes the gradient wherever the ReLU output was not positive.
pub fn relu_backward_in_place<T: Real>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, y) in grad.as_mut_slice().iter_mut().zip(output.as_slice()) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_example() {
        let x = Tensor::<f64>::filled([1, 3, 3, 1], 1.0);
        let y = conv2d_same(&x, &[1.0; 9], &[0.0]).unwrap();
        assert_eq!(y.as_slice(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_delta_and_bias() {
        let x = Tensor::<f32>::new([2, 3, 4, 2], (0..48).map(|v| v as f32 * 0.5 - 3.0).collect()).unwrap();
        let mut k = vec![0.0f32; 9 * 4];
        k[kernel_index(1, 1, 0, 0, 2, 2)] = 1.0;
        k[kernel_index(1, 1, 1, 1, 2, 2)] = 1.0;
        assert_eq!(conv2d_same(&x, &k, &[0.0, 0.0]).unwrap(), x);
        let y = conv2d_same(&x, &[0.0; 36], &[1.5, -2.0]).unwrap();
        assert!(y.as_slice().chunks(2).all(|px| px == [1.5, -2.0]));
        assert!(conv2d_same(&x, &[0.0; 9], &[0.0]).is_err());
    }

    #[test]
    fn batch_norm_examples() {
        let x = Tensor::<f64>::new([2, 1, 1, 1], vec![-1.0, 1.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.as_slice()[0] + expect).abs() < 1e-15 && (y.as_slice()[1] - expect).abs() < 1e-15);
        assert!((y.as_slice()[1] - 0.999995).abs() < 1e-6);
        assert!((p.running_mean[0]).abs() < 1e-15);
        assert!((p.running_var[0] - 1.0).abs() < 1e-15);

        let mut p = BatchNormParams::new(1);
        p.gamma[0] = 0.0;
        p.beta[0] = 0.7;
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!(y.as_slice().iter().all(|v| *v == 0.7));

        let mut p = BatchNormParams::<f64>::new(1);
        let x = Tensor::new([3, 1, 1, 1], vec![0.3, -2.0, 5.0]).unwrap();
        let y = batch_norm(&x, &mut p, Mode::Infer).unwrap();
        assert!(y.as_slice().iter().zip(x.as_slice()).all(|(a, b)| (a - b).abs() < 1e-4));
        assert_eq!(p, BatchNormParams::new(1));
    }

    #[test]
    fn batch_norm_train_statistics() {
        let data: Vec<f64> = (0..60).map(|v| ((v * 37 % 11) as f64).sin() * 3.0 + v as f64 * 0.1).collect();
        let x = Tensor::new([5, 2, 2, 3], data).unwrap();
        let (y, _) = batch_norm_forward(&x, &BatchNormParams::new(3), Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = y.as_slice().iter().skip(c).step_by(3).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn relu_and_mask() {
        let mut x = Tensor::<f32>::new([1, 1, 2, 2], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        relu_in_place(&mut x);
        assert_eq!(x.as_slice(), &[0.0, 0.0, 2.0, 0.0]);
        let mut g = Tensor::filled([1, 1, 2, 2], 1.0);
        relu_backward_in_place(&mut g, &x);
        assert_eq!(g.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
