//! DnCNN and FFDNet residual denoisers.
//!
//! Both networks share a `D`-layer body: conv + ReLU, `D − 2` blocks of
//! conv + batch norm + ReLU, and a final conv. The body predicts the noise,
//! which is subtracted from the input through a skip connection.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CnnError, Result};
use crate::image::{ffdnet_pack, ffdnet_unpack, IMAGE_CHANNELS, PACKED_CHANNELS, PACKED_DATA_CHANNELS};
use crate::layers::{
    batch_norm_backward, batch_norm_forward, conv2d_backward, conv2d_same, relu_backward_in_place, relu_in_place,
    BatchNormParams, BnCache, Mode, KERNEL,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Dncnn,
    Ffdnet,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Dncnn => "dncnn",
            Arch::Ffdnet => "ffdnet",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Arch::Dncnn => 0,
            Arch::Ffdnet => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Arch::Dncnn),
            1 => Some(Arch::Ffdnet),
            _ => None,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Arch::Dncnn => IMAGE_CHANNELS,
            Arch::Ffdnet => PACKED_CHANNELS,
        }
    }

    pub fn output_channels(&self) -> usize {
        match self {
            Arch::Dncnn => IMAGE_CHANNELS,
            Arch::Ffdnet => PACKED_DATA_CHANNELS,
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = CnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dncnn" => Ok(Arch::Dncnn),
            "ffdnet" => Ok(Arch::Ffdnet),
            _ => Err(CnnError::InvalidConfig(format!("unknown architecture '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvBn,
}

impl LayerKind {
    pub fn code(&self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::ConvBn => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::ConvBn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    /// `[3][3][c_in][c_out]`.
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub bn: Option<BatchNormParams<T>>,
}

impl<T: Real> Layer<T> {
    fn zeros(kind: LayerKind, c_in: usize, c_out: usize) -> Self {
        Self {
            kind,
            c_in,
            c_out,
            kernel: vec![T::zero(); KERNEL * KERNEL * c_in * c_out],
            bias: vec![T::zero(); c_out],
            bn: (kind == LayerKind::ConvBn).then(|| BatchNormParams::new(c_out)),
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Layer {
            kind: self.kind,
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: cv(&self.kernel),
            bias: cv(&self.bias),
            bn: self.bn.as_ref().map(|p| BatchNormParams {
                gamma: cv(&p.gamma),
                beta: cv(&p.beta),
                running_mean: cv(&p.running_mean),
                running_var: cv(&p.running_var),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub arch: Arch,
    pub depth: usize,
    pub features: usize,
    /// Antenna count the network was built for.
    pub m: usize,
    /// LIS element count the network was built for.
    pub k: usize,
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> NetworkWeights<T> {
    /// Network with all kernels and biases zero, unit BN scale and zero shift.
    pub fn zeros(arch: Arch, depth: usize, features: usize, m: usize, k: usize) -> Result<Self> {
        if depth < 2 || features == 0 {
            return Err(CnnError::InvalidConfig(format!("need depth ≥ 2 and features ≥ 1, got D={depth}, N_f={features}")));
        }
        if arch == Arch::Ffdnet && m % 2 != 0 {
            return Err(CnnError::OddAntennaCount(m));
        }
        let mut layers = Vec::with_capacity(depth);
        layers.push(Layer::zeros(LayerKind::Conv, arch.input_channels(), features));
        for _ in 1..depth - 1 {
            layers.push(Layer::zeros(LayerKind::ConvBn, features, features));
        }
        layers.push(Layer::zeros(LayerKind::Conv, features, arch.output_channels()));
        Ok(Self { arch, depth, features, m, k, layers })
    }

    /// Kernels drawn from `N(0, 2 / (9 c_in))`, zero biases, unit BN scale.
    /// The output layer starts at zero, so the untrained network is the
    /// identity map.
    pub fn random<R: Rng + ?Sized>(arch: Arch, depth: usize, features: usize, m: usize, k: usize, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(arch, depth, features, m, k)?;
        let last = w.layers.len() - 1;
        for layer in &mut w.layers[..last] {
            let std = (2.0 / (9.0 * layer.c_in as f64)).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut layer.kernel {
                *v = T::lit(normal.sample(rng));
            }
        }
        Ok(w)
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            arch: self.arch,
            depth: self.depth,
            features: self.features,
            m: self.m,
            k: self.k,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Checks the layer pattern and channel widths.
    pub fn validate(&self) -> Result<()> {
        let d = self.layers.len();
        let bad = |msg: String| Err(CnnError::Malformed(msg));
        if d != self.depth || d < 2 {
            return bad(format!("{d} layers for depth {}", self.depth));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let kind = if i == 0 || i == d - 1 { LayerKind::Conv } else { LayerKind::ConvBn };
            let c_in = if i == 0 { self.arch.input_channels() } else { self.features };
            let c_out = if i == d - 1 { self.arch.output_channels() } else { self.features };
            if l.kind != kind || l.c_in != c_in || l.c_out != c_out {
                return bad(format!("layer {i} is {:?} {}→{}, expected {kind:?} {c_in}→{c_out}", l.kind, l.c_in, l.c_out));
            }
            if l.kernel.len() != KERNEL * KERNEL * c_in * c_out || l.bias.len() != c_out {
                return bad(format!("layer {i} parameter sizes"));
            }
            if l.bn.is_some() != (kind == LayerKind::ConvBn) || l.bn.as_ref().is_some_and(|p| p.channels() != c_out) {
                return bad(format!("layer {i} batch norm record"));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len() + l.bn.as_ref().map_or(0, |p| 2 * p.channels()))
            .sum()
    }

    /// Trainable parameter slices in a fixed order: per layer kernel, bias,
    /// then gamma and beta when present.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
            if let Some(p) = l.bn.as_mut() {
                out.push(&mut p.gamma);
                out.push(&mut p.beta);
            }
        }
        out
    }

    /// Folds batch statistics from a train-mode pass into the running stats.
    pub fn update_running_stats(&mut self, stats: &[Option<(Vec<T>, Vec<T>)>]) {
        for (l, s) in self.layers.iter_mut().zip(stats) {
            if let (Some(p), Some((mean, var))) = (l.bn.as_mut(), s) {
                p.update_running(mean, var);
            }
        }
    }

    /// Body output (the predicted noise) with optional per-layer caches.
    fn body(&self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        let d = self.layers.len();
        let mut caches = Vec::with_capacity(if keep { d } else { 0 });
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = conv2d_same(&h, &l.kernel, &l.bias)?;
            let mut bn_cache = None;
            if let Some(p) = &l.bn {
                let (z, c) = batch_norm_forward(&y, p, mode)?;
                y = z;
                bn_cache = c;
            }
            if i + 1 < d {
                relu_in_place(&mut y);
            }
            let input = std::mem::replace(&mut h, y);
            if keep {
                caches.push(LayerCache { input, bn: bn_cache });
            }
        }
        Ok((h, caches))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.arch.input_channels() {
            return Err(CnnError::ShapeMismatch(format!(
                "{} expects {} input channels, got {}",
                self.arch.as_str(),
                self.arch.input_channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Denoised output in the network domain: the data channels of `x` minus
    /// the predicted noise.
    pub fn apply(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (noise, _) = self.body(x, mode, false)?;
        x.leading_channels(self.arch.output_channels()).sub(&noise)
    }
}

struct LayerCache<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
}

/// DnCNN estimate from a batch of LS images `(N, M, K+1, 2)`.
pub fn dncnn_forward<T: Real>(img: &Tensor<T>, w: &NetworkWeights<T>, mode: Mode) -> Result<Tensor<T>> {
    if w.arch != Arch::Dncnn {
        return Err(CnnError::InvalidConfig("weights are not a DnCNN".into()));
    }
    w.apply(img, mode)
}

/// FFDNet estimate from a batch of LS images; `sigma` is the training noise
/// standard deviation `√σ²`.
pub fn ffdnet_forward<T: Real>(img: &Tensor<T>, sigma: f64, t_p: usize, w: &NetworkWeights<T>, mode: Mode) -> Result<Tensor<T>> {
    if w.arch != Arch::Ffdnet {
        return Err(CnnError::InvalidConfig("weights are not an FFDNet".into()));
    }
    let packed = ffdnet_pack(img, sigma, t_p)?;
    ffdnet_unpack(&w.apply(&packed, mode)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Option<Vec<T>>,
    pub beta: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
    /// Batch mean and biased variance seen by each BN layer.
    pub batch_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient slices in the order of [`NetworkWeights::params_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            out.push(&l.kernel);
            out.push(&l.bias);
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.slices().iter().flat_map(|s| s.iter()).fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Mean squared Frobenius error over the batch.
pub fn batch_loss<T: Real>(output: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    let n = T::from_usize(output.batch()).expect("batch");
    Ok(output.squared_distance(targets)? / n)
}

/// Train-mode loss `(1/N) Σ ‖Z − F(X)‖_F²` and its gradient with respect to
/// every trainable parameter. Inputs and targets are in the network domain
/// (images for DnCNN, packed tensors for FFDNet).
pub fn loss_and_grads<T: Real>(w: &NetworkWeights<T>, inputs: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Gradients<T>)> {
    w.check_input(inputs)?;
    if inputs.batch() == 0 {
        return Err(CnnError::ShapeMismatch("empty batch".into()));
    }
    let (noise, caches) = w.body(inputs, Mode::Train, true)?;
    let output = inputs.leading_channels(w.arch.output_channels()).sub(&noise)?;
    let loss = batch_loss(&output, targets)?;

    // d loss / d noise = −2 (output − target) / N
    let scale = T::lit(-2.0) / T::from_usize(inputs.batch()).expect("batch");
    let mut grad = output.sub(targets)?;
    grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);

    let d = w.layers.len();
    let mut layers = Vec::with_capacity(d);
    let mut batch_stats = Vec::with_capacity(d);
    for i in (0..d).rev() {
        let l = &w.layers[i];
        let cache = &caches[i];
        if i + 1 < d {
            // ReLU output is the next layer's input.
            relu_backward_in_place(&mut grad, &caches[i + 1].input);
        }
        let (mut g_gamma, mut g_beta) = (None, None);
        if let (Some(p), Some(bc)) = (&l.bn, &cache.bn) {
            let g = batch_norm_backward(&grad, &p.gamma, bc)?;
            grad = g.input;
            g_gamma = Some(g.gamma);
            g_beta = Some(g.beta);
            batch_stats.push(Some((bc.batch_mean.clone(), bc.batch_var.clone())));
        } else {
            batch_stats.push(None);
        }
        let cg = conv2d_backward(&cache.input, &l.kernel, &grad, i > 0)?;
        layers.push(LayerGrads { kernel: cg.kernel, bias: cg.bias, gamma: g_gamma, beta: g_beta });
        if let Some(gx) = cg.input {
            grad = gx;
        }
    }
    layers.reverse();
    batch_stats.reverse();
    Ok((loss, Gradients { layers, batch_stats }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lis_core::RngStream;

    fn random_input<T: Real>(dims: [usize; 4], seed: u64) -> Tensor<T> {
        let mut rng = RngStream::new(seed, 0).rng();
        let n: usize = dims.iter().product();
        Tensor::new(dims, (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn layer_pattern() {
        let w = NetworkWeights::<f32>::zeros(Arch::Dncnn, 8, 4, 10, 10).unwrap();
        assert_eq!(w.layers.len(), 8);
        assert_eq!(w.layers[0].kind, LayerKind::Conv);
        assert_eq!((w.layers[0].c_in, w.layers[0].c_out), (2, 4));
        assert!(w.layers[1..7].iter().all(|l| l.kind == LayerKind::ConvBn && l.c_in == 4 && l.c_out == 4));
        assert_eq!((w.layers[7].c_in, w.layers[7].c_out), (4, 2));
        let f = NetworkWeights::<f32>::zeros(Arch::Ffdnet, 8, 4, 10, 10).unwrap();
        assert_eq!((f.layers[0].c_in, f.layers[7].c_out), (5, 4));
        assert!(f.validate().is_ok());
        assert!(NetworkWeights::<f32>::zeros(Arch::Ffdnet, 8, 4, 9, 10).is_err());
        assert!(NetworkWeights::<f32>::zeros(Arch::Dncnn, 1, 4, 10, 10).is_err());
    }

    #[test]
    fn zero_weights_are_identity() {
        let img: Tensor<f32> = random_input([3, 4, 5, 2], 1);
        let w = NetworkWeights::zeros(Arch::Dncnn, 4, 3, 4, 4).unwrap();
        assert_eq!(dncnn_forward(&img, &w, Mode::Train).unwrap(), img);
        assert_eq!(dncnn_forward(&img, &w, Mode::Infer).unwrap(), img);
        let f = NetworkWeights::zeros(Arch::Ffdnet, 4, 3, 4, 4).unwrap();
        assert_eq!(ffdnet_forward(&img, 1.3, 5, &f, Mode::Infer).unwrap(), img);
    }

    #[test]
    fn noise_map_reaches_output() {
        let img: Tensor<f64> = random_input([1, 4, 3, 2], 2);
        let mut f = NetworkWeights::random(Arch::Ffdnet, 3, 4, 4, 2, &mut RngStream::new(3, 0).rng()).unwrap();
        for (i, v) in f.layers[2].kernel.iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 0.1;
        }
        let a = ffdnet_forward(&img, 1.0, 3, &f, Mode::Infer).unwrap();
        let b = ffdnet_forward(&img, 2.0, 3, &f, Mode::Infer).unwrap();
        assert_eq!(a.dims(), img.dims());
        assert_ne!(a, b);
        for c_out in 0..4 {
            for t in 0..9 {
                f.layers[0].kernel[(t * 5 + 4) * 4 + c_out] = 0.0;
            }
        }
        let a = ffdnet_forward(&img, 1.0, 3, &f, Mode::Infer).unwrap();
        let b = ffdnet_forward(&img, 2.0, 3, &f, Mode::Infer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let img: Tensor<f64> = random_input([2, 4, 3, 2], 4);
        let w = NetworkWeights::zeros(Arch::Dncnn, 3, 2, 4, 2).unwrap();
        let (loss, g) = loss_and_grads(&w, &img, &img).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn loss_is_quadratic_in_target_offset() {
        let img: Tensor<f64> = random_input([3, 4, 3, 2], 5);
        let w = NetworkWeights::random(Arch::Dncnn, 3, 2, 4, 2, &mut RngStream::new(5, 1).rng()).unwrap();
        let out = dncnn_forward(&img, &w, Mode::Train).unwrap();
        let delta: Tensor<f64> = random_input([3, 4, 3, 2], 6);
        let shifted = |s: f64| {
            let data = out.as_slice().iter().zip(delta.as_slice()).map(|(o, d)| o + s * d).collect();
            Tensor::new(out.dims(), data).unwrap()
        };
        let (l1, _) = loss_and_grads(&w, &img, &shifted(1.0)).unwrap();
        let (l2, _) = loss_and_grads(&w, &img, &shifted(2.0)).unwrap();
        let base = delta.squared_distance(&Tensor::zeros(delta.dims())).unwrap() / 3.0;
        assert!((l1 - base).abs() < 1e-12 * base);
        assert!((l2 - 4.0 * base).abs() < 1e-12 * base);
    }

    #[test]
    fn forward_is_deterministic() {
        let img: Tensor<f32> = random_input([2, 10, 11, 2], 7);
        let w = NetworkWeights::random(Arch::Dncnn, 8, 4, 10, 10, &mut RngStream::new(1, 1).rng()).unwrap();
        let a = dncnn_forward(&img, &w, Mode::Infer).unwrap();
        let b = dncnn_forward(&img, &w, Mode::Infer).unwrap();
        assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
