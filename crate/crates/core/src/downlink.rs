//! Downlink beamforming from channel estimates and achievable rate.

use rayon::prelude::*;

use crate::channel::{build_czz, split_z, ChannelSampler, CorrelationProfile};
use crate::error::{LisError, Result};
use crate::estimation::{
    build_measurement, mean_stderr, simulate_rx, unit_pilots, ChannelEstimator, GenieEstimator, LmmseEstimator,
    LsEstimator, MeasurementModel, Method,
};
use crate::math::{ComplexMatrix, C64};
use crate::pilot::dft_phase_matrix;
use crate::rng::RngStream;

pub const DEFAULT_COHERENCE: usize = 196;

/// Normalizer below which the plug-in beamformer is undefined.
const DEGENERATE_NORM: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    /// LIS phase shifts during data transmission.
    pub phi_d: Vec<C64>,
    /// Unit-norm BS beamformer.
    pub w: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    /// Transmit SNR `P_tx / σ_d²` in linear units.
    pub gamma_bar: f64,
    pub t_c: usize,
    pub t_p: usize,
}

impl RateConfig {
    pub fn new(gamma_bar: f64, t_c: usize, t_p: usize) -> Result<Self> {
        if !(gamma_bar > 0.0) || !gamma_bar.is_finite() {
            return Err(LisError::InvalidParameter(format!("transmit SNR must be positive, got {gamma_bar}")));
        }
        if t_p >= t_c {
            return Err(LisError::InvalidParameter(format!("pilot length {t_p} must be below coherence time {t_c}")));
        }
        Ok(Self { gamma_bar, t_c, t_p })
    }

    pub fn pre_log(&self) -> f64 {
        1.0 - self.t_p as f64 / self.t_c as f64
    }
}

/// `φ_d = exp(-j arg(V̂ᵀ ĥ_d*))`, `w = (ĥ_d + V̂ φ_d)* / ‖ĥ_d + V̂ φ_d‖`.
pub fn design_beamformers(h_d_hat: &[C64], v_hat: &ComplexMatrix) -> Result<BeamformingSolution> {
    let (m, k) = v_hat.shape();
    if h_d_hat.len() != m {
        return Err(LisError::DimensionMismatch { expected: (m, 1), got: (h_d_hat.len(), 1) });
    }
    let phi_d: Vec<C64> = (0..k)
        .map(|c| {
            let s: C64 = (0..m).map(|r| v_hat[(r, c)] * h_d_hat[r].conj()).sum();
            C64::from_polar(1.0, -s.arg())
        })
        .collect();
    let g = effective_channel(h_d_hat, v_hat, &phi_d);
    let norm = g.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(LisError::DegenerateEstimate(norm));
    }
    let w = g.iter().map(|x| x.conj() / norm).collect();
    Ok(BeamformingSolution { phi_d, w })
}

/// `h_d + V φ`.
fn effective_channel(h_d: &[C64], v: &ComplexMatrix, phi: &[C64]) -> Vec<C64> {
    let mut g = h_d.to_vec();
    for (c, p) in phi.iter().enumerate() {
        for (r, gr) in g.iter_mut().enumerate() {
            *gr += v[(r, c)] * p;
        }
    }
    g
}

/// Received amplitude `|(h_dᵀ + φ_dᵀ Vᵀ) w|` on the given channel.
pub fn received_amplitude(h_d: &[C64], v: &ComplexMatrix, sol: &BeamformingSolution) -> f64 {
    let g = effective_channel(h_d, v, &sol.phi_d);
    g.iter().zip(&sol.w).map(|(a, b)| a * b).sum::<C64>().norm()
}

/// `(1 - T_p/T_c) log2(1 + γ̄ |(h_dᵀ + φ_dᵀ Vᵀ) w|²)` on the true channel.
pub fn achievable_rate(h_d: &[C64], v: &ComplexMatrix, sol: &BeamformingSolution, cfg: &RateConfig) -> f64 {
    let a = received_amplitude(h_d, v, sol);
    rate_from_gain(a * a, cfg)
}

/// Rate for a given beamforming gain `|(h_dᵀ + φ_dᵀ Vᵀ) w|²`.
pub fn rate_from_gain(gain: f64, cfg: &RateConfig) -> f64 {
    cfg.pre_log() * (1.0 + cfg.gamma_bar * gain).log2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSamples {
    pub gamma_bar: Vec<f64>,
    /// `rates[g][trial]`.
    pub rates: Vec<Vec<f64>>,
}

impl RateSamples {
    /// Mean and standard error per transmit SNR.
    pub fn summary(&self) -> Vec<(f64, f64)> {
        self.rates.iter().map(|r| mean_stderr(r)).collect()
    }
}

/// Per-trial rates of one estimator over a grid of transmit SNRs (linear).
/// Trial `i` draws channel and training noise from `stream.substream(i)`, so
/// different estimators see identical realizations.
pub fn rate_samples_with(
    estimator: &dyn ChannelEstimator,
    sampler: &ChannelSampler,
    model: &MeasurementModel,
    gamma_bar: &[f64],
    t_c: usize,
    trials: usize,
    stream: RngStream,
) -> Result<RateSamples> {
    if trials == 0 {
        return Err(LisError::InvalidParameter("trials must be at least 1".into()));
    }
    let configs = gamma_bar
        .iter()
        .map(|&g| RateConfig::new(g, t_c, model.pilot_len()))
        .collect::<Result<Vec<_>>>()?;
    let m = model.antennas();
    let gains: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i).rng();
            let ch = sampler.sample_with(&mut rng);
            let y = simulate_rx(model, &ch.z, &mut rng)?;
            let z_hat = estimator.estimate(&y, &ch.z)?;
            let (h_d_hat, v_hat) = split_z(&z_hat, m);
            let sol = design_beamformers(&h_d_hat, &v_hat)?;
            Ok(received_amplitude(&ch.h_d, &ch.v, &sol).powi(2))
        })
        .collect::<Result<Vec<_>>>()?;
    let rates = configs.iter().map(|cfg| gains.iter().map(|&g| rate_from_gain(g, cfg)).collect()).collect();
    Ok(RateSamples { gamma_bar: gamma_bar.to_vec(), rates })
}

/// Mean rate and standard error for a linear estimator or the genie, trained
/// with the DFT design at training SNR `gamma_tr` (linear).
pub fn monte_carlo_rate(
    method: Method,
    p: &CorrelationProfile,
    gamma_tr: f64,
    cfg: &RateConfig,
    trials: usize,
    stream: RngStream,
) -> Result<(f64, f64)> {
    let t_p = p.k + 1;
    if cfg.t_p != t_p {
        return Err(LisError::InvalidParameter(format!("rate pre-log must use T_p = K + 1 = {t_p}")));
    }
    let sampler = ChannelSampler::new(*p)?;
    let model = build_measurement(&dft_phase_matrix(t_p, p.k)?, &unit_pilots(t_p), 1.0 / gamma_tr, p.m)?;
    let estimator: Box<dyn ChannelEstimator> = match method {
        Method::Ls => Box::new(LsEstimator::new(model.clone())?),
        Method::Lmmse => Box::new(LmmseEstimator::new(model.clone(), &build_czz(p)?)?),
        Method::Genie => Box::new(GenieEstimator),
        Method::Dncnn | Method::Ffdnet => {
            return Err(LisError::InvalidParameter(format!(
                "{method} needs trained weights; use rate_samples_with"
            )))
        }
    };
    let samples = rate_samples_with(estimator.as_ref(), &sampler, &model, &[cfg.gamma_bar], cfg.t_c, trials, stream)?;
    Ok(samples.summary()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::estimation::sigma2_from_snr_db;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn scalar_perfect_csi_amplitude() {
        for s in 0..50 {
            let p = CorrelationProfile::new(1, 5, 0.0, 0.0, 0.4).unwrap();
            let ch = sample_channel(&p, RngStream::new(9, s)).unwrap();
            let sol = design_beamformers(&ch.h_d, &ch.v).unwrap();
            let expect = ch.h_d[0].norm() + (0..5).map(|k| ch.v[(0, k)].norm()).sum::<f64>();
            assert!((received_amplitude(&ch.h_d, &ch.v, &sol) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn invariants_and_scaling() {
        let p = CorrelationProfile::new(4, 6, 0.3, 0.5, 0.2).unwrap();
        for s in 0..20 {
            let ch = sample_channel(&p, RngStream::new(2, s)).unwrap();
            let sol = design_beamformers(&ch.h_d, &ch.v).unwrap();
            assert!(sol.phi_d.iter().all(|x| (x.norm() - 1.0).abs() <= 1e-12));
            let wn = sol.w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!((wn - 1.0).abs() <= 1e-12);

            let scaled_h: Vec<C64> = ch.h_d.iter().map(|x| x * 3.7).collect();
            let scaled = design_beamformers(&scaled_h, &ch.v.scale_real(3.7)).unwrap();
            assert!(sol.phi_d.iter().zip(&scaled.phi_d).all(|(a, b)| (a - b).norm() < 1e-12));
            assert!(sol.w.iter().zip(&scaled.w).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    #[test]
    fn degenerate_rejected() {
        let v = ComplexMatrix::zeros(2, 3);
        assert!(matches!(design_beamformers(&[c(0.0, 0.0); 2], &v), Err(LisError::DegenerateEstimate(_))));
        assert!(design_beamformers(&[c(1.0, 0.0); 3], &v).is_err());
    }

    #[test]
    fn rate_arithmetic() {
        let cfg = RateConfig::new(3.0, 196, 11).unwrap();
        let r = rate_from_gain(1.0, &cfg);
        assert!((r - 185.0 / 196.0 * 2.0).abs() < 1e-14);
        assert!((r - 1.8878).abs() < 1e-4);
        let near = RateConfig::new(3.0, 196, 195).unwrap();
        assert!(rate_from_gain(1.0, &near) < 0.011);
        assert!(RateConfig::new(3.0, 196, 196).is_err());
        assert!(RateConfig::new(0.0, 196, 11).is_err());
    }

    #[test]
    fn genie_dominates_scalar_case() {
        let p = CorrelationProfile::new(1, 4, 0.0, 0.0, 0.0).unwrap();
        let cfg = RateConfig::new(2.0, 196, 5).unwrap();
        for s in 0..100 {
            let ch = sample_channel(&p, RngStream::new(4, s)).unwrap();
            let genie = design_beamformers(&ch.h_d, &ch.v).unwrap();
            let noisy_h: Vec<C64> = ch.h_d.iter().map(|x| x + c(0.3, -0.2)).collect();
            let noisy = design_beamformers(&noisy_h, &ch.v.add(&ComplexMatrix::from_fn(1, 4, |_, j| c(0.1 * j as f64, 0.4))).unwrap()).unwrap();
            assert!(achievable_rate(&ch.h_d, &ch.v, &genie, &cfg) >= achievable_rate(&ch.h_d, &ch.v, &noisy, &cfg) - 1e-12);
        }
    }

    #[test]
    fn rate_monotone_in_gamma() {
        let p = CorrelationProfile::new(3, 2, 0.3, 0.3, 0.3).unwrap();
        let ch = sample_channel(&p, RngStream::new(1, 1)).unwrap();
        let sol = design_beamformers(&ch.h_d, &ch.v).unwrap();
        let mut prev = 0.0;
        for g in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let r = achievable_rate(&ch.h_d, &ch.v, &sol, &RateConfig::new(g, 196, 3).unwrap());
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn monte_carlo_genie_upper_bounds() {
        let p = CorrelationProfile::new(4, 4, 0.6, 0.6, 0.6).unwrap();
        let cfg = RateConfig::new(1.0, 196, 5).unwrap();
        let g_tr = 1.0 / sigma2_from_snr_db(-10.0);
        let stream = RngStream::new(8, 3);
        let (genie, gs) = monte_carlo_rate(Method::Genie, &p, g_tr, &cfg, 300, stream).unwrap();
        for m in [Method::Ls, Method::Lmmse] {
            let (r, s) = monte_carlo_rate(m, &p, g_tr, &cfg, 300, stream).unwrap();
            assert!(genie + 2.0 * (gs + s) >= r);
            assert!(genie > r);
        }
        let bad = RateConfig::new(1.0, 196, 7).unwrap();
        assert!(monte_carlo_rate(Method::Genie, &p, g_tr, &bad, 10, stream).is_err());
    }
}
