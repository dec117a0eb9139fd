//! CNN channel estimators and batch evaluation helpers.

use lis_core::estimation::{ls_estimate, mean_stderr, ChannelEstimator, MeasurementModel, Method};
use lis_core::{LisError, C64};

use crate::error::{CnnError, Result};
use crate::image::{ffdnet_pack_levels, ffdnet_unpack, from_image, noise_level, to_image};
use crate::layers::Mode;
use crate::network::{Arch, NetworkWeights};
use crate::tensor::{Tensor, Tensor4};

/// LS estimate followed by a trained denoiser. FFDNet is fed the noise level
/// of the measurement model it is bound to.
pub struct CnnEstimator {
    weights: NetworkWeights<f32>,
    model: MeasurementModel,
}

impl CnnEstimator {
    pub fn new(weights: NetworkWeights<f32>, model: MeasurementModel) -> Result<Self> {
        weights.validate()?;
        if weights.m != model.antennas() || weights.k != model.elements() {
            return Err(CnnError::ShapeMismatch(format!(
                "network built for M={}, K={}, model has M={}, K={}",
                weights.m,
                weights.k,
                model.antennas(),
                model.elements()
            )));
        }
        Ok(Self { weights, model })
    }

    pub fn weights(&self) -> &NetworkWeights<f32> {
        &self.weights
    }
}

impl ChannelEstimator for CnnEstimator {
    fn method(&self) -> Method {
        match self.weights.arch {
            Arch::Dncnn => Method::Dncnn,
            Arch::Ffdnet => Method::Ffdnet,
        }
    }

    fn estimate(&self, y: &[C64], _truth: &[C64]) -> lis_core::Result<Vec<C64>> {
        let ls = ls_estimate(y, &self.model)?;
        let to_core = |e: CnnError| LisError::InvalidParameter(e.to_string());
        let img = to_image::<f32>(&ls.z_hat, self.model.antennas()).map_err(to_core)?;
        let out = denoise(&self.weights, &img, &[self.model.sigma2() as f32], self.model.pilot_len()).map_err(to_core)?;
        from_image(&out, 0).map_err(to_core)
    }
}

/// Runs the network over a batch of LS images in inference mode, in chunks
/// of `chunk` items. `sigma2` holds each image's noise variance (used by
/// FFDNet only).
pub fn denoise_batched(w: &NetworkWeights<f32>, images: &Tensor4, sigma2: &[f32], t_p: usize, chunk: usize) -> Result<Tensor4> {
    let n = images.batch();
    if sigma2.len() != n {
        return Err(CnnError::ShapeMismatch(format!("{} noise variances for {n} images", sigma2.len())));
    }
    let mut parts = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let s2: Vec<f32> = idx.iter().map(|&i| sigma2[i]).collect();
        parts.push(denoise(w, &images.gather(&idx), &s2, t_p)?);
    }
    Tensor::concat(&parts)
}

fn denoise(w: &NetworkWeights<f32>, images: &Tensor4, sigma2: &[f32], t_p: usize) -> Result<Tensor4> {
    match w.arch {
        Arch::Dncnn => w.apply(images, Mode::Infer),
        Arch::Ffdnet => {
            let levels: Vec<f32> = sigma2.iter().map(|s| noise_level((*s as f64).sqrt(), t_p) as f32).collect();
            ffdnet_unpack(&w.apply(&ffdnet_pack_levels(images, &levels)?, Mode::Infer)?)
        }
    }
}

/// Per-part mean squared error with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartMse {
    pub total: f64,
    pub direct: f64,
    pub cascaded: f64,
    pub stderr_total: f64,
    pub stderr_direct: f64,
    pub stderr_cascaded: f64,
    pub count: usize,
}

/// Per-sample squared errors `(direct, cascaded)` between two batches of
/// channel images; column 0 of each image is the direct channel.
pub fn image_errors(estimates: &Tensor4, targets: &Tensor4) -> Result<Vec<(f64, f64)>> {
    if estimates.dims() != targets.dims() {
        return Err(CnnError::ShapeMismatch(format!("{:?} vs {:?}", estimates.dims(), targets.dims())));
    }
    let [n, m, cols, c] = estimates.dims();
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let (mut d, mut cas) = (0.0, 0.0);
        for r in 0..m {
            for k in 0..cols {
                for ch in 0..c {
                    let e = (estimates.get(b, r, k, ch) - targets.get(b, r, k, ch)) as f64;
                    if k == 0 {
                        d += e * e;
                    } else {
                        cas += e * e;
                    }
                }
            }
        }
        out.push((d, cas));
    }
    Ok(out)
}

pub fn summarize_errors(errors: &[(f64, f64)]) -> PartMse {
    let d: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let c: Vec<f64> = errors.iter().map(|e| e.1).collect();
    let t: Vec<f64> = errors.iter().map(|e| e.0 + e.1).collect();
    let (direct, stderr_direct) = mean_stderr(&d);
    let (cascaded, stderr_cascaded) = mean_stderr(&c);
    let (total, stderr_total) = mean_stderr(&t);
    PartMse { total, direct, cascaded, stderr_total, stderr_direct, stderr_cascaded, count: errors.len() }
}
