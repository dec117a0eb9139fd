//! Adam optimizer and the early-stopping training loop.

use rand::seq::SliceRandom;

use lis_core::RngStream;

use crate::data::{Dataset, Split};
use crate::error::{CnnError, Result};
use crate::image::{ffdnet_pack_levels, noise_level, PACKED_DATA_CHANNELS};
use crate::layers::Mode;
use crate::network::{loss_and_grads, Arch, Gradients, NetworkWeights};
use crate::tensor::{Real, Tensor, Tensor4};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Relative validation improvement that counts as progress.
    pub improvement_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 100,
            patience: 5,
            max_epochs: 200,
            improvement_delta: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.beta1, self.beta2, self.adam_epsilon, self.improvement_delta];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || self.beta1 >= 1.0
            || self.beta2 >= 1.0
            || self.batch_size == 0
            || self.patience == 0
            || self.max_epochs == 0
        {
            return Err(CnnError::InvalidConfig(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of steps taken.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(w: &mut NetworkWeights<T>) -> Self {
        let shapes: Vec<usize> = w.params_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr m̂ / (√v̂ + ε)`.
pub fn adam_step<T: Real>(w: &mut NetworkWeights<T>, grads: &Gradients<T>, state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    let g = grads.slices();
    let mut params = w.params_mut();
    if params.len() != g.len() || params.len() != state.m.len() || params.iter().zip(&g).any(|(p, gi)| p.len() != gi.len()) {
        return Err(CnnError::ShapeMismatch("gradient layout does not match the network".into()));
    }
    state.t += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(state.t as i32));
    let c2 = T::one() - T::lit(cfg.beta2.powi(state.t as i32));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.adam_epsilon);
    for (((p, gi), m), v) in params.iter_mut().zip(&g).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * gi[i];
            v[i] = b2 * v[i] + (T::one() - b2) * gi[i] * gi[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSpec {
    pub arch: Arch,
    pub depth: usize,
    pub features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean train-mode batch loss over the epoch.
    pub train_loss: f64,
    /// Inference-mode loss on the validation split.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Network-domain inputs and targets for a split.
pub fn network_tensors(arch: Arch, split: &Split, t_p: usize) -> Result<(Tensor4, Tensor4)> {
    match arch {
        Arch::Dncnn => Ok((split.inputs.clone(), split.targets.clone())),
        Arch::Ffdnet => {
            let levels: Vec<f32> = split.sigma2.iter().map(|s2| noise_level((*s2 as f64).sqrt(), t_p) as f32).collect();
            let inputs = ffdnet_pack_levels(&split.inputs, &levels)?;
            let targets = ffdnet_pack_levels(&split.targets, &levels)?.leading_channels(PACKED_DATA_CHANNELS);
            Ok((inputs, targets))
        }
    }
}

/// Mean per-sample loss in inference mode, evaluated in chunks.
pub fn evaluate_loss<T: Real>(w: &NetworkWeights<T>, inputs: &Tensor<T>, targets: &Tensor<T>, chunk: usize) -> Result<f64> {
    let n = inputs.batch();
    let mut total = 0.0;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let out = w.apply(&inputs.gather(&idx), Mode::Infer)?;
        total += out.squared_distance(&targets.gather(&idx))?.as_f64();
    }
    Ok(total / n as f64)
}

/// Trains a network with Adam and early stopping on the validation loss,
/// returning the weights of the best validation epoch.
pub fn train(spec: NetSpec, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(NetworkWeights<f32>, TrainLog)> {
    train_with(spec, data, cfg, seed, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    spec: NetSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkWeights<f32>, TrainLog)> {
    cfg.validate()?;
    if data.train.len() == 0 || data.val.len() == 0 {
        return Err(CnnError::InvalidConfig("training and validation splits must be non-empty".into()));
    }
    let mut init_rng = RngStream::new(seed, INIT_STREAM).rng();
    let mut w = NetworkWeights::<f32>::random(spec.arch, spec.depth, spec.features, data.m, data.k, &mut init_rng)?;
    let (train_x, train_y) = network_tensors(spec.arch, &data.train, data.t_p)?;
    let (val_x, val_y) = network_tensors(spec.arch, &data.val, data.t_p)?;

    let mut state = AdamState::new(&mut w);
    let mut shuffle_rng = RngStream::new(seed, SHUFFLE_STREAM).rng();
    let mut order: Vec<usize> = (0..train_x.batch()).collect();
    let mut best = (evaluate_loss(&w, &val_x, &val_y, cfg.batch_size)?, w.clone(), 0usize);
    let mut log = TrainLog { epochs: Vec::new(), best_epoch: 0, best_val_loss: best.0, stopped_early: false };
    let mut stale = 0;
    let mut improved_once = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train_x.gather(chunk);
            let y = train_y.gather(chunk);
            let (loss, grads) = loss_and_grads(&w, &x, &y)?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(CnnError::Diverged { epoch, loss });
            }
            adam_step(&mut w, &grads, &mut state, cfg)?;
            w.update_running_stats(&grads.batch_stats);
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = evaluate_loss(&w, &val_x, &val_y, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(CnnError::Diverged { epoch, loss: val_loss });
        }
        let record = EpochRecord { epoch, train_loss: loss_sum / batches as f64, val_loss };
        on_epoch(&record);
        log.epochs.push(record);

        if val_loss < best.0 * (1.0 - cfg.improvement_delta) || !improved_once {
            improved_once = true;
            best = (val_loss, w.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = best.2;
    log.best_val_loss = best.0;
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::batch_loss;

    #[test]
    fn adam_first_step() {
        let mut w = NetworkWeights::<f64>::zeros(Arch::Dncnn, 2, 1, 2, 1).unwrap();
        let mut state = AdamState::new(&mut w);
        let mut grads = zero_grads(&w);
        grads.layers[0].kernel[0] = 1.0;
        adam_step(&mut w, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert!((w.layers[0].kernel[0] + 0.001).abs() < 1e-9);
        assert!(w.layers[0].kernel[1..].iter().all(|v| *v == 0.0));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut w = NetworkWeights::<f32>::random(Arch::Dncnn, 3, 2, 2, 1, &mut RngStream::new(1, 1).rng()).unwrap();
        let before = w.clone();
        let mut state = AdamState::new(&mut w);
        let grads = zero_grads(&w);
        for _ in 0..3 {
            adam_step(&mut w, &grads, &mut state, &TrainConfig::default()).unwrap();
        }
        assert_eq!(w, before);
    }

    fn zero_grads<T: Real>(w: &NetworkWeights<T>) -> Gradients<T> {
        Gradients {
            layers: w
                .layers
                .iter()
                .map(|l| crate::network::LayerGrads {
                    kernel: vec![T::zero(); l.kernel.len()],
                    bias: vec![T::zero(); l.bias.len()],
                    gamma: l.bn.as_ref().map(|p| vec![T::zero(); p.channels()]),
                    beta: l.bn.as_ref().map(|p| vec![T::zero(); p.channels()]),
                })
                .collect(),
            batch_stats: vec![None; w.layers.len()],
        }
    }

    #[test]
    fn batch_loss_is_mean_frobenius() {
        let a = Tensor::<f64>::new([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::zeros([2, 1, 1, 2]);
        assert_eq!(batch_loss(&a, &b).unwrap(), 15.0);
    }
}
