//! Training data: LS channel images paired with the true channel images.

use lis_core::channel::ChannelSampler;
use lis_core::estimation::{build_measurement, ls_estimate, sigma2_from_snr_db, simulate_rx, unit_pilots};
use lis_core::{CorrelationProfile, PhaseShiftMatrix, RngStream};

use crate::error::{CnnError, Result};
use crate::image::{to_image, IMAGE_CHANNELS};
use crate::tensor::{Tensor, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 16_000, val: 8_000, test: 6_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub profile: CorrelationProfile,
    /// Training SNRs in dB, assigned to samples round-robin.
    pub snr_db: Vec<f64>,
    pub sizes: SplitSizes,
    pub phi: PhaseShiftMatrix,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let s = self.sizes;
        if s.train == 0 || s.val == 0 || s.test == 0 {
            return Err(CnnError::InvalidConfig(format!("split sizes must be at least 1, got {s:?}")));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::InvalidConfig("SNR list must be non-empty and finite".into()));
        }
        if self.phi.elements() != self.profile.k {
            return Err(CnnError::InvalidConfig(format!(
                "phase matrix has {} elements, profile K = {}",
                self.phi.elements(),
                self.profile.k
            )));
        }
        Ok(())
    }
}

/// One split: `inputs` are LS images, `targets` true-channel images, both
/// `(N, M, K+1, 2)`; `sigma2` is each sample's training noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Tensor4,
    pub targets: Tensor4,
    pub sigma2: Vec<f32>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    /// Samples whose noise variance equals `sigma2` (to `f32` precision).
    pub fn select_sigma2(&self, sigma2: f64) -> Split {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.sigma2[i] == sigma2 as f32).collect();
        Split {
            inputs: self.inputs.gather(&idx),
            targets: self.targets.gather(&idx),
            sigma2: idx.iter().map(|&i| self.sigma2[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub k: usize,
    pub t_p: usize,
    pub snr_db: Vec<f64>,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Draws every split from its own stream; sample `i` of split `s` uses
/// `RngStream::new(seed, s + 1).substream(i)`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let p = spec.profile;
    let t_p = spec.phi.pilot_len();
    let sampler = ChannelSampler::new(p)?;
    let models = spec
        .snr_db
        .iter()
        .map(|&db| build_measurement(&spec.phi, &unit_pilots(t_p), sigma2_from_snr_db(db), p.m))
        .collect::<lis_core::Result<Vec<_>>>()?;

    let make = |split: u64, n: usize| -> Result<Split> {
        let stream = RngStream::new(spec.seed, split + 1);
        let item = p.m * (p.k + 1) * IMAGE_CHANNELS;
        let mut inputs = Vec::with_capacity(n * item);
        let mut targets = Vec::with_capacity(n * item);
        let mut sigma2 = Vec::with_capacity(n);
        for i in 0..n {
            let model = &models[i % models.len()];
            let mut rng = stream.substream(i as u64).rng();
            let ch = sampler.sample_with(&mut rng);
            let y = simulate_rx(model, &ch.z, &mut rng)?;
            let ls = ls_estimate(&y, model)?;
            inputs.extend(to_image::<f32>(&ls.z_hat, p.m)?.into_vec());
            targets.extend(to_image::<f32>(&ch.z, p.m)?.into_vec());
            sigma2.push(model.sigma2() as f32);
        }
        let dims = [n, p.m, p.k + 1, IMAGE_CHANNELS];
        Ok(Split { inputs: Tensor::new(dims, inputs)?, targets: Tensor::new(dims, targets)?, sigma2 })
    };

    Ok(Dataset {
        m: p.m,
        k: p.k,
        t_p,
        snr_db: spec.snr_db.clone(),
        train: make(0, spec.sizes.train)?,
        val: make(1, spec.sizes.val)?,
        test: make(2, spec.sizes.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lis_core::pilot::dft_phase_matrix;

    fn spec(snr_db: Vec<f64>, sizes: SplitSizes) -> DatasetSpec {
        DatasetSpec {
            profile: CorrelationProfile::new(4, 3, 0.6, 0.6, 0.6).unwrap(),
            snr_db,
            sizes,
            phi: dft_phase_matrix(4, 3).unwrap(),
            seed: 11,
        }
    }

    #[test]
    fn sizes_and_tags() {
        let d = generate_dataset(&spec(vec![0.0], SplitSizes { train: 7, val: 3, test: 2 })).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (7, 3, 2));
        assert_eq!(d.train.inputs.dims(), [7, 4, 4, 2]);
        assert!(d.train.sigma2.iter().chain(&d.test.sigma2).all(|s| *s == 1.0));

        let d = generate_dataset(&spec(vec![-5.0, 0.0, 5.0], SplitSizes { train: 6, val: 3, test: 3 })).unwrap();
        let expect: Vec<f32> = [-5.0, 0.0, 5.0, -5.0, 0.0, 5.0].iter().map(|db| sigma2_from_snr_db(*db) as f32).collect();
        assert_eq!(d.train.sigma2, expect);
        assert_eq!(d.train.select_sigma2(1.0).len(), 2);
    }

    #[test]
    fn noise_power_matches_ls_error() {
        let d = generate_dataset(&spec(vec![0.0], SplitSizes { train: 3000, val: 1, test: 1 })).unwrap();
        let per_element = d.train.inputs.squared_distance(&d.train.targets).unwrap() as f64 / (3000.0 * 16.0);
        assert!((per_element / 0.25 - 1.0).abs() < 0.03, "{per_element}");
    }

    #[test]
    fn deterministic_and_split_streams_differ() {
        let s = spec(vec![0.0], SplitSizes { train: 4, val: 4, test: 4 });
        let a = generate_dataset(&s).unwrap();
        assert_eq!(a, generate_dataset(&s).unwrap());
        assert_ne!(a.train.targets, a.val.targets);
        assert!(generate_dataset(&spec(vec![], SplitSizes::default())).is_err());
        assert!(generate_dataset(&spec(vec![0.0], SplitSizes { train: 0, val: 1, test: 1 })).is_err());
    }
}
