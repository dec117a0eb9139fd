//! Pilot measurement model, LS and LMMSE estimators, and closed-form MSE
//! expressions for the DFT training design.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{build_czz, split_z, ChannelSampler, CorrelationProfile};
use crate::error::{LisError, Result};
use crate::math::{eig_hermitian, kron, Cholesky, ComplexMatrix, HermitianMatrix, C64};
use crate::pilot::PhaseShiftMatrix;
use crate::rng::{complex_normal, RngStream};

/// Tolerance for recognising `Φ^H Φ = T_p I`.
const ORTHOGONAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ls,
    Lmmse,
    Dncnn,
    Ffdnet,
    Genie,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ls, Method::Lmmse, Method::Dncnn, Method::Ffdnet, Method::Genie];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::Lmmse => "lmmse",
            Method::Dncnn => "dncnn",
            Method::Ffdnet => "ffdnet",
            Method::Genie => "genie",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = LisError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LisError::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// `y = G z + n` with `G = X (Φ ⊗ I_M)` and `X = diag(x_1 1_M, ..., x_T 1_M)`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    g: ComplexMatrix,
    phi: PhaseShiftMatrix,
    pilots: Vec<C64>,
    sigma2: f64,
    m: usize,
    orthogonal: bool,
}

impl MeasurementModel {
    pub fn g(&self) -> &ComplexMatrix {
        &self.g
    }

    pub fn phi(&self) -> &PhaseShiftMatrix {
        &self.phi
    }

    pub fn pilots(&self) -> &[C64] {
        &self.pilots
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn antennas(&self) -> usize {
        self.m
    }

    pub fn elements(&self) -> usize {
        self.phi.elements()
    }

    pub fn pilot_len(&self) -> usize {
        self.phi.pilot_len()
    }

    pub fn unknowns(&self) -> usize {
        self.m * (self.elements() + 1)
    }

    /// Whether `G^H G = T_p I`, enabling the per-block fast paths.
    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    /// `G z` using the Kronecker structure.
    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        let (m, k1, t_p) = (self.m, self.elements() + 1, self.pilot_len());
        let phi = self.phi.matrix();
        let mut y = vec![C64::new(0.0, 0.0); m * t_p];
        for t in 0..t_p {
            let out = &mut y[t * m..(t + 1) * m];
            for k in 0..k1 {
                let coef = self.pilots[t] * phi[(t, k)];
                if coef.re == 0.0 && coef.im == 0.0 {
                    continue;
                }
                for (o, zi) in out.iter_mut().zip(&z[k * m..(k + 1) * m]) {
                    *o += coef * zi;
                }
            }
        }
        y
    }

    /// `G^H y` using the Kronecker structure.
    pub fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let (m, k1, t_p) = (self.m, self.elements() + 1, self.pilot_len());
        let phi = self.phi.matrix();
        let mut z = vec![C64::new(0.0, 0.0); m * k1];
        for t in 0..t_p {
            let yt = &y[t * m..(t + 1) * m];
            for k in 0..k1 {
                let coef = (self.pilots[t] * phi[(t, k)]).conj();
                for (o, yi) in z[k * m..(k + 1) * m].iter_mut().zip(yt) {
                    *o += coef * yi;
                }
            }
        }
        z
    }
}

/// Assembles the measurement model. `sigma2 = 0` is accepted for noiseless
/// simulation; the LMMSE estimator requires a positive value.
pub fn build_measurement(phi: &PhaseShiftMatrix, pilots: &[C64], sigma2: f64, m: usize) -> Result<MeasurementModel> {
    if pilots.len() != phi.pilot_len() {
        return Err(LisError::DimensionMismatch {
            expected: (phi.pilot_len(), 1),
            got: (pilots.len(), 1),
        });
    }
    if let Some(x) = pilots.iter().find(|x| (x.norm() - 1.0).abs() > 1e-12) {
        return Err(LisError::InvalidParameter(format!("pilot symbol {x} is not unit modulus")));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(LisError::InvalidParameter(format!("invalid noise variance {sigma2}")));
    }
    if m == 0 {
        return Err(LisError::InvalidParameter("M must be at least 1".into()));
    }
    let x_diag: Vec<C64> = pilots.iter().flat_map(|x| std::iter::repeat_n(*x, m)).collect();
    let psi = kron(phi.matrix(), &ComplexMatrix::identity(m));
    let g = ComplexMatrix::diag(&x_diag).matmul(&psi)?;
    Ok(MeasurementModel {
        g,
        phi: phi.clone(),
        pilots: pilots.to_vec(),
        sigma2,
        m,
        orthogonal: phi.is_orthogonal(ORTHOGONAL_TOLERANCE),
    })
}

/// Default pilot sequence: all ones.
pub fn unit_pilots(t_p: usize) -> Vec<C64> {
    vec![C64::new(1.0, 0.0); t_p]
}

/// `y = G z + n`, `n ~ CN(0, σ² I)`.
pub fn simulate_rx<R: Rng + ?Sized>(model: &MeasurementModel, z: &[C64], rng: &mut R) -> Result<Vec<C64>> {
    if z.len() != model.unknowns() {
        return Err(LisError::DimensionMismatch {
            expected: (model.unknowns(), 1),
            got: (z.len(), 1),
        });
    }
    let mut y = model.apply(z);
    if model.sigma2 > 0.0 {
        let s = model.sigma2.sqrt();
        for yi in &mut y {
            *yi += complex_normal(rng) * s;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub z_hat: Vec<C64>,
    pub h_d_hat: Vec<C64>,
    pub v_hat: ComplexMatrix,
    pub method: Method,
    pub sq_err_direct: Option<f64>,
    pub sq_err_cascaded: Option<f64>,
}

impl EstimateReport {
    pub fn new(z_hat: Vec<C64>, m: usize, method: Method) -> Self {
        let (h_d_hat, v_hat) = split_z(&z_hat, m);
        Self {
            z_hat,
            h_d_hat,
            v_hat,
            method,
            sq_err_direct: None,
            sq_err_cascaded: None,
        }
    }

    /// Fills the squared-error fields against the true `z`.
    pub fn with_truth(mut self, z: &[C64]) -> Self {
        let (d, c) = squared_errors(&self.z_hat, z, self.h_d_hat.len());
        self.sq_err_direct = Some(d);
        self.sq_err_cascaded = Some(c);
        self
    }

    pub fn sq_err_total(&self) -> Option<f64> {
        Some(self.sq_err_direct? + self.sq_err_cascaded?)
    }
}

/// Squared error split into the direct (first `m` entries) and cascaded parts.
pub fn squared_errors(z_hat: &[C64], z: &[C64], m: usize) -> (f64, f64) {
    let mut direct = 0.0;
    let mut cascaded = 0.0;
    for (i, (a, b)) in z_hat.iter().zip(z).enumerate() {
        let e = (a - b).norm_sqr();
        if i < m {
            direct += e;
        } else {
            cascaded += e;
        }
    }
    (direct, cascaded)
}

fn check_y(y: &[C64], model: &MeasurementModel) -> Result<()> {
    let n = model.antennas() * model.pilot_len();
    if y.len() != n {
        return Err(LisError::DimensionMismatch { expected: (n, 1), got: (y.len(), 1) });
    }
    Ok(())
}

fn check_ls_rank(model: &MeasurementModel) -> Result<()> {
    let k1 = model.elements() + 1;
    if model.pilot_len() < k1 {
        return Err(LisError::InsufficientPilots { pilots: model.pilot_len(), required: k1 });
    }
    Ok(())
}

/// Least squares via the normal equations `(G^H G)^{-1} G^H y`.
pub fn ls_estimate_normal_equations(y: &[C64], model: &MeasurementModel) -> Result<Vec<C64>> {
    check_y(y, model)?;
    check_ls_rank(model)?;
    let gram = HermitianMatrix::symmetrize(model.g.adjoint_matmul(&model.g)?)?;
    let chol = Cholesky::factor(&gram).map_err(|_| LisError::SingularNormalMatrix)?;
    let mut rhs = model.apply_adjoint(y);
    chol.solve_vec_in_place(&mut rhs);
    Ok(rhs)
}

fn ls_fast(y: &[C64], model: &MeasurementModel) -> Vec<C64> {
    let scale = 1.0 / model.pilot_len() as f64;
    model.apply_adjoint(y).into_iter().map(|v| v * scale).collect()
}

/// Least-squares estimate. Orthogonal designs use `G^H y / T_p`.
pub fn ls_estimate(y: &[C64], model: &MeasurementModel) -> Result<EstimateReport> {
    check_y(y, model)?;
    check_ls_rank(model)?;
    let z_hat = if model.orthogonal {
        ls_fast(y, model)
    } else {
        ls_estimate_normal_equations(y, model)?
    };
    Ok(EstimateReport::new(z_hat, model.m, Method::Ls))
}

fn check_lmmse(model: &MeasurementModel, czz: &HermitianMatrix) -> Result<()> {
    if !(model.sigma2 > 0.0) {
        return Err(LisError::InvalidParameter("LMMSE needs a positive noise variance".into()));
    }
    let n = model.unknowns();
    if czz.dim() != n {
        return Err(LisError::DimensionMismatch { expected: (n, n), got: czz.shape() });
    }
    Ok(())
}

/// `C G^H (G C G^H + σ² I)^{-1} y`.
pub fn lmmse_covariance_form(y: &[C64], model: &MeasurementModel, czz: &HermitianMatrix) -> Result<Vec<C64>> {
    check_y(y, model)?;
    check_lmmse(model, czz)?;
    let gc = model.g.matmul(czz)?;
    let mut p = gc.matmul(&model.g.adjoint())?;
    p.add_diagonal(C64::new(model.sigma2, 0.0));
    let p = HermitianMatrix::symmetrize(p)?;
    let mut w = y.to_vec();
    Cholesky::factor(&p)?.solve_vec_in_place(&mut w);
    // C G^H w = (G C)^H w
    Ok(gc.adjoint().matvec(&w)?)
}

/// `(C^{-1} + G^H G / σ²)^{-1} G^H y / σ²`.
pub fn lmmse_information_form(y: &[C64], model: &MeasurementModel, czz: &HermitianMatrix) -> Result<Vec<C64>> {
    check_y(y, model)?;
    check_lmmse(model, czz)?;
    let s2 = model.sigma2;
    let c_inv = Cholesky::factor(czz)?.inverse();
    let gram = model.g.adjoint_matmul(&model.g)?.scale_real(1.0 / s2);
    let info = HermitianMatrix::symmetrize(c_inv.add(&gram)?)?;
    let mut rhs: Vec<C64> = model.apply_adjoint(y).into_iter().map(|v| v / s2).collect();
    Cholesky::factor(&info)?.solve_vec_in_place(&mut rhs);
    Ok(rhs)
}

/// Block filters `R_b (R_b + σ²/T_p I)^{-1}` for an orthogonal design with a
/// block-diagonal prior. `None` when the prior has off-diagonal blocks.
fn dft_block_filters(model: &MeasurementModel, czz: &HermitianMatrix) -> Result<Option<Vec<ComplexMatrix>>> {
    let m = model.m;
    let k1 = model.elements() + 1;
    for bi in 0..k1 {
        for bj in 0..k1 {
            if bi != bj && czz.block(bi * m, bj * m, m, m).max_abs() != 0.0 {
                return Ok(None);
            }
        }
    }
    let delta = model.sigma2 / model.pilot_len() as f64;
    let mut filters = Vec::with_capacity(k1);
    for b in 0..k1 {
        let r = czz.block(b * m, b * m, m, m);
        let mut shifted = r.clone();
        shifted.add_diagonal(C64::new(delta, 0.0));
        let shifted = HermitianMatrix::symmetrize(shifted)?;
        // F = R (R + δI)^{-1} is Hermitian because the two factors commute.
        let f = Cholesky::factor(&shifted)?.solve(&r)?;
        filters.push(f.adjoint());
    }
    Ok(Some(filters))
}

fn apply_block_filters(filters: &[ComplexMatrix], z_ls: &[C64], m: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(z_ls.len());
    for (b, f) in filters.iter().enumerate() {
        out.extend(f.matvec(&z_ls[b * m..(b + 1) * m]).expect("block size"));
    }
    out
}

/// LMMSE estimate. Orthogonal designs with a block-diagonal prior filter the
/// LS estimate block by block; other designs use the covariance form.
pub fn lmmse_estimate(y: &[C64], model: &MeasurementModel, czz: &HermitianMatrix) -> Result<EstimateReport> {
    check_y(y, model)?;
    check_lmmse(model, czz)?;
    if model.orthogonal {
        if let Some(filters) = dft_block_filters(model, czz)? {
            let z_hat = apply_block_filters(&filters, &ls_fast(y, model), model.m);
            return Ok(EstimateReport::new(z_hat, model.m, Method::Lmmse));
        }
    }
    let z_hat = lmmse_covariance_form(y, model, czz)?;
    Ok(EstimateReport::new(z_hat, model.m, Method::Lmmse))
}

/// A channel estimator bound to one measurement model.
pub trait ChannelEstimator: Sync {
    fn method(&self) -> Method;

    /// Estimates `z` from `y`. `truth` is only consulted by the genie.
    fn estimate(&self, y: &[C64], truth: &[C64]) -> Result<Vec<C64>>;
}

pub struct LsEstimator {
    model: MeasurementModel,
}

impl LsEstimator {
    pub fn new(model: MeasurementModel) -> Result<Self> {
        check_ls_rank(&model)?;
        Ok(Self { model })
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }
}

impl ChannelEstimator for LsEstimator {
    fn method(&self) -> Method {
        Method::Ls
    }

    fn estimate(&self, y: &[C64], _truth: &[C64]) -> Result<Vec<C64>> {
        Ok(ls_estimate(y, &self.model)?.z_hat)
    }
}

enum LmmseGain {
    Blocks(Vec<ComplexMatrix>),
    Dense(ComplexMatrix),
}

/// LMMSE estimator with its gain precomputed for repeated use.
pub struct LmmseEstimator {
    model: MeasurementModel,
    gain: LmmseGain,
}

impl LmmseEstimator {
    pub fn new(model: MeasurementModel, czz: &HermitianMatrix) -> Result<Self> {
        check_lmmse(&model, czz)?;
        let blocks = if model.orthogonal { dft_block_filters(&model, czz)? } else { None };
        let gain = match blocks {
            Some(filters) => LmmseGain::Blocks(filters),
            None => {
                let gc = model.g.matmul(czz)?;
                let mut p = gc.matmul(&model.g.adjoint())?;
                p.add_diagonal(C64::new(model.sigma2, 0.0));
                let p = HermitianMatrix::symmetrize(p)?;
                // W = C G^H P^{-1} = (P^{-1} G C)^H
                LmmseGain::Dense(Cholesky::factor(&p)?.solve(&gc)?.adjoint())
            }
        };
        Ok(Self { model, gain })
    }
}

impl ChannelEstimator for LmmseEstimator {
    fn method(&self) -> Method {
        Method::Lmmse
    }

    fn estimate(&self, y: &[C64], _truth: &[C64]) -> Result<Vec<C64>> {
        check_y(y, &self.model)?;
        match &self.gain {
            LmmseGain::Blocks(f) => Ok(apply_block_filters(f, &ls_fast(y, &self.model), self.model.m)),
            LmmseGain::Dense(w) => w.matvec(y),
        }
    }
}

/// Returns the true channel.
pub struct GenieEstimator;

impl ChannelEstimator for GenieEstimator {
    fn method(&self) -> Method {
        Method::Genie
    }

    fn estimate(&self, _y: &[C64], truth: &[C64]) -> Result<Vec<C64>> {
        Ok(truth.to_vec())
    }
}

/// Closed-form LS MSE for an orthogonal design: `(direct, cascaded)` parts
/// `M σ² / T_p` and `K M σ² / T_p`.
pub fn ls_mse_closed_form(p: &CorrelationProfile, t_p: usize, sigma2: f64) -> (f64, f64) {
    let per = sigma2 / t_p as f64;
    (p.m as f64 * per, (p.k * p.m) as f64 * per)
}

/// LMMSE MSE for the DFT design from the eigenvalues of `R_ub` and `R_lb`,
/// split into `(direct, cascaded)`.
pub fn analytic_mse_dft_parts(p: &CorrelationProfile, t_p: usize, sigma2: f64) -> Result<(f64, f64)> {
    p.validate()?;
    let snr = t_p as f64 / sigma2;
    let (ub, _) = eig_hermitian(&p.r_ub()?)?;
    let (lb, _) = eig_hermitian(&p.r_lb()?)?;
    let term = |l: f64| if l <= 0.0 { 0.0 } else { 1.0 / (1.0 / l + snr) };
    let direct: f64 = ub.iter().map(|&l| term(l)).sum();
    let cascaded: f64 = p.k as f64 * lb.iter().map(|&l| term(l)).sum::<f64>();
    Ok((direct, cascaded))
}

pub fn analytic_mse_dft(p: &CorrelationProfile, t_p: usize, sigma2: f64) -> Result<f64> {
    let (d, c) = analytic_mse_dft_parts(p, t_p, sigma2)?;
    Ok(d + c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrRegime {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceForm {
    /// Traces computed from the correlation matrices directly.
    General,
    /// Closed-form traces of the exponential correlation matrix.
    Exponential,
}

/// `tr(R^{-1})` for an `m x m` exponential correlation matrix.
pub fn exp_trace_inverse(m: usize, rho: f64) -> f64 {
    let r2 = rho * rho;
    (m as f64 + (m as f64 - 2.0) * r2) / (1.0 - r2)
}

/// `tr(R²)` for an `m x m` exponential correlation matrix.
pub fn exp_trace_square(m: usize, rho: f64) -> f64 {
    let r2 = rho * rho;
    let mf = m as f64;
    (mf * (1.0 - r2 * r2) - 2.0 * r2 * (1.0 - r2.powi(m as i32))) / ((1.0 - r2) * (1.0 - r2))
}

fn trace_inverse(r: &HermitianMatrix) -> Result<f64> {
    Ok(Cholesky::factor(r)?.inverse().trace_real())
}

fn trace_square(r: &HermitianMatrix) -> f64 {
    r.as_slice().iter().map(|z| z.norm_sqr()).sum()
}

/// First-order expansions of the DFT-design LMMSE MSE.
///
/// High SNR: `M(K+1)σ²/T_p - (σ²/T_p)² (tr R_ub^{-1} + K tr R_lb^{-1})`.
/// Low SNR: `M(K+1) - (T_p/σ²) (tr R_ub² + K tr R_lb²)`.
pub fn asymptotic_mse(p: &CorrelationProfile, t_p: usize, sigma2: f64, regime: SnrRegime, form: TraceForm) -> Result<f64> {
    p.validate()?;
    let k = p.k as f64;
    let n = p.unknowns() as f64;
    let ratio = sigma2 / t_p as f64;
    match regime {
        SnrRegime::High => {
            let (ub, lb) = match form {
                TraceForm::General => (trace_inverse(&p.r_ub()?)?, trace_inverse(&p.r_lb()?)?),
                TraceForm::Exponential => (exp_trace_inverse(p.m, p.rho1), exp_trace_inverse(p.m, p.rho2)),
            };
            Ok(n * ratio - ratio * ratio * (ub + k * lb))
        }
        SnrRegime::Low => {
            let (ub, lb) = match form {
                TraceForm::General => (trace_square(&p.r_ub()?), trace_square(&p.r_lb()?)),
                TraceForm::Exponential => (exp_trace_square(p.m, p.rho1), exp_trace_square(p.m, p.rho2)),
            };
            Ok(n - (ub + k * lb) / ratio)
        }
    }
}

/// Monte Carlo MSE summary in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSummary {
    pub total: f64,
    pub direct: f64,
    pub cascaded: f64,
    /// Standard error of `total`.
    pub stderr_total: f64,
    pub stderr_direct: f64,
    pub stderr_cascaded: f64,
    pub trials: usize,
}

/// Mean and standard error (sample std / √n) of a sequence.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `trials` independent trials of channel draw, pilot transmission and
/// estimation. Trial `i` uses `stream.substream(i)`, so the same stream gives
/// the same channels and noise for every estimator.
pub fn empirical_mse_with(
    estimator: &dyn ChannelEstimator,
    sampler: &ChannelSampler,
    model: &MeasurementModel,
    trials: usize,
    stream: RngStream,
) -> Result<MseSummary> {
    if trials == 0 {
        return Err(LisError::InvalidParameter("trials must be at least 1".into()));
    }
    let m = model.antennas();
    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i).rng();
            let ch = sampler.sample_with(&mut rng);
            let y = simulate_rx(model, &ch.z, &mut rng)?;
            let z_hat = estimator.estimate(&y, &ch.z)?;
            Ok(squared_errors(&z_hat, &ch.z, m))
        })
        .collect::<Result<Vec<_>>>()?;

    let direct: Vec<f64> = per_trial.iter().map(|e| e.0).collect();
    let cascaded: Vec<f64> = per_trial.iter().map(|e| e.1).collect();
    let total: Vec<f64> = per_trial.iter().map(|e| e.0 + e.1).collect();
    let (t, st) = mean_stderr(&total);
    let (d, sd) = mean_stderr(&direct);
    let (c, sc) = mean_stderr(&cascaded);
    Ok(MseSummary {
        total: t,
        direct: d,
        cascaded: c,
        stderr_total: st,
        stderr_direct: sd,
        stderr_cascaded: sc,
        trials,
    })
}

/// Monte Carlo MSE for the linear estimators and the genie with all-ones
/// pilots. CNN methods go through [`empirical_mse_with`].
pub fn empirical_mse(
    method: Method,
    p: &CorrelationProfile,
    phi: &PhaseShiftMatrix,
    sigma2: f64,
    trials: usize,
    stream: RngStream,
) -> Result<MseSummary> {
    let sampler = ChannelSampler::new(*p)?;
    let model = build_measurement(phi, &unit_pilots(phi.pilot_len()), sigma2, p.m)?;
    let estimator: Box<dyn ChannelEstimator> = match method {
        Method::Ls => Box::new(LsEstimator::new(model.clone())?),
        Method::Lmmse => Box::new(LmmseEstimator::new(model.clone(), &build_czz(p)?)?),
        Method::Genie => Box::new(GenieEstimator),
        Method::Dncnn | Method::Ffdnet => {
            return Err(LisError::InvalidParameter(format!(
                "{method} needs trained weights; use empirical_mse_with"
            )))
        }
    };
    empirical_mse_with(estimator.as_ref(), &sampler, &model, trials, stream)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise variance for a training SNR in dB (`γ_tr = 1/σ²`).
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    1.0 / from_db(snr_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilot::{dft_phase_matrix, onoff_phase_matrix, random_phase_matrix};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn measurement_structure() {
        let phi = dft_phase_matrix(5, 3).unwrap();
        let model = build_measurement(&phi, &unit_pilots(5), 1.0, 2).unwrap();
        assert_eq!(*model.g(), kron(phi.matrix(), &ComplexMatrix::identity(2)));
        let gram = model.g().adjoint_matmul(model.g()).unwrap();
        assert!(gram.sub(&kron(&phi.gram(), &ComplexMatrix::identity(2))).unwrap().max_abs() < 1e-13);

        let pilots: Vec<C64> = (0..5).map(|t| C64::from_polar(1.0, 0.7 * t as f64)).collect();
        let model = build_measurement(&phi, &pilots, 1.0, 1).unwrap();
        let expected = ComplexMatrix::diag(&pilots).matmul(phi.matrix()).unwrap();
        assert!(model.g().sub(&expected).unwrap().max_abs() < 1e-15);

        assert!(build_measurement(&phi, &unit_pilots(4), 1.0, 1).is_err());
        assert!(build_measurement(&phi, &[c(2.0, 0.0); 5], 1.0, 1).is_err());
    }

    #[test]
    fn structured_products_match_dense() {
        let phi = random_phase_matrix(6, 4, RngStream::new(2, 2)).unwrap();
        let pilots: Vec<C64> = (0..6).map(|t| C64::from_polar(1.0, 1.1 * t as f64)).collect();
        let model = build_measurement(&phi, &pilots, 1.0, 3).unwrap();
        let z: Vec<C64> = (0..15).map(|i| c(i as f64, -(i as f64) / 2.0)).collect();
        let dense = model.g().matvec(&z).unwrap();
        let fast = model.apply(&z);
        assert!(dense.iter().zip(&fast).all(|(a, b)| (a - b).norm() < 1e-12));
        let y: Vec<C64> = (0..18).map(|i| c(1.0 / (i + 1) as f64, i as f64)).collect();
        let dense = model.g().adjoint().matvec(&y).unwrap();
        let fast = model.apply_adjoint(&y);
        assert!(dense.iter().zip(&fast).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn simulate_rx_noise_variance() {
        let phi = dft_phase_matrix(3, 2).unwrap();
        let z = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.5)];
        let noiseless = build_measurement(&phi, &unit_pilots(3), 0.0, 1).unwrap();
        let mut rng = RngStream::new(1, 1).rng();
        assert_eq!(simulate_rx(&noiseless, &z, &mut rng).unwrap(), noiseless.apply(&z));

        let s2 = 0.3;
        let model = build_measurement(&phi, &unit_pilots(3), s2, 1).unwrap();
        let clean = model.apply(&z);
        let mut acc = 0.0;
        let mut count = 0;
        for _ in 0..34_000 {
            let y = simulate_rx(&model, &z, &mut rng).unwrap();
            assert_eq!(y.len(), 3);
            for (a, b) in y.iter().zip(&clean) {
                acc += (a - b).norm_sqr();
                count += 1;
            }
        }
        assert!((acc / count as f64 / s2 - 1.0).abs() < 0.02);
    }

    #[test]
    fn ls_hand_example() {
        let phi = dft_phase_matrix(2, 1).unwrap();
        let model = build_measurement(&phi, &unit_pilots(2), 0.0, 1).unwrap();
        let z = vec![c(1.0, 1.0), c(2.0, 0.0)];
        let y = simulate_rx(&model, &z, &mut RngStream::new(0, 0).rng()).unwrap();
        assert!((y[0] - c(3.0, 1.0)).norm() < 1e-15);
        assert!((y[1] - c(-1.0, 1.0)).norm() < 1e-15);
        let est = ls_estimate(&y, &model).unwrap();
        assert!((est.z_hat[0] - z[0]).norm() < 1e-15 && (est.z_hat[1] - z[1]).norm() < 1e-15);
    }

    #[test]
    fn ls_noiseless_and_fast_path_agree() {
        for (phi, m) in [
            (onoff_phase_matrix(5, 3).unwrap(), 2),
            (random_phase_matrix(6, 4, RngStream::new(4, 1)).unwrap(), 3),
            (dft_phase_matrix(7, 4).unwrap(), 2),
        ] {
            let model = build_measurement(&phi, &unit_pilots(phi.pilot_len()), 0.0, m).unwrap();
            let n = model.unknowns();
            let z: Vec<C64> = (0..n).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
            let y = model.apply(&z);
            let est = ls_estimate(&y, &model).unwrap();
            assert!(est.z_hat.iter().zip(&z).all(|(a, b)| (a - b).norm() < 1e-10));
            let slow = ls_estimate_normal_equations(&y, &model).unwrap();
            assert!(slow.iter().zip(&est.z_hat).all(|(a, b)| (a - b).norm() < 1e-10));
        }
    }

    #[test]
    fn report_split() {
        let z: Vec<C64> = (0..6).map(|i| c(i as f64, 0.0)).collect();
        let r = EstimateReport::new(z.clone(), 2, Method::Ls).with_truth(&vec![c(0.0, 0.0); 6]);
        assert_eq!(r.h_d_hat, z[..2].to_vec());
        assert_eq!(r.v_hat.column(1), z[4..6].to_vec());
        assert_eq!(r.sq_err_direct, Some(1.0));
        assert_eq!(r.sq_err_cascaded, Some(4.0 + 9.0 + 16.0 + 25.0));
        assert_eq!(crate::channel::stack_z(&r.h_d_hat, &r.v_hat), r.z_hat);
    }

    #[test]
    fn lmmse_hand_example() {
        let phi = dft_phase_matrix(2, 1).unwrap();
        let model = build_measurement(&phi, &unit_pilots(2), 1.0, 1).unwrap();
        let czz = HermitianMatrix::identity(2);
        let y = vec![c(3.0, 0.0), c(1.0, 0.0)];
        let est = lmmse_estimate(&y, &model, &czz).unwrap();
        assert!((est.z_hat[0] - c(4.0 / 3.0, 0.0)).norm() < 1e-14);
        assert!((est.z_hat[1] - c(2.0 / 3.0, 0.0)).norm() < 1e-14);
        for z in [lmmse_covariance_form(&y, &model, &czz).unwrap(), lmmse_information_form(&y, &model, &czz).unwrap()] {
            assert!((z[0] - c(4.0 / 3.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn lmmse_forms_agree() {
        let p = CorrelationProfile::new(3, 4, 0.5, 0.8, 0.3).unwrap();
        let czz = build_czz(&p).unwrap();
        let sampler = ChannelSampler::new(p).unwrap();
        for (s, phi) in [
            dft_phase_matrix(5, 4).unwrap(),
            random_phase_matrix(6, 4, RngStream::new(1, 9)).unwrap(),
            onoff_phase_matrix(5, 4).unwrap(),
        ]
        .into_iter()
        .enumerate()
        {
            let model = build_measurement(&phi, &unit_pilots(phi.pilot_len()), 0.4, 3).unwrap();
            let mut rng = RngStream::new(3, s as u64).rng();
            let ch = sampler.sample_with(&mut rng);
            let y = simulate_rx(&model, &ch.z, &mut rng).unwrap();
            let a = lmmse_covariance_form(&y, &model, &czz).unwrap();
            let b = lmmse_information_form(&y, &model, &czz).unwrap();
            let c_ = lmmse_estimate(&y, &model, &czz).unwrap().z_hat;
            let d = LmmseEstimator::new(model.clone(), &czz).unwrap().estimate(&y, &ch.z).unwrap();
            let norm: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            for other in [&b, &c_, &d] {
                let diff: f64 = a.iter().zip(other.iter()).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
                assert!(diff <= 1e-8 * norm, "{diff} vs {norm}");
            }
        }
    }

    #[test]
    fn lmmse_vanishing_noise_matches_ls() {
        let p = CorrelationProfile::new(2, 3, 0.5, 0.5, 0.5).unwrap();
        let czz = build_czz(&p).unwrap();
        let phi = dft_phase_matrix(4, 3).unwrap();
        let model = build_measurement(&phi, &unit_pilots(4), 1e-8, 2).unwrap();
        let ch = ChannelSampler::new(p).unwrap().sample(RngStream::new(6, 6));
        let y = simulate_rx(&model, &ch.z, &mut RngStream::new(6, 7).rng()).unwrap();
        let a = lmmse_estimate(&y, &model, &czz).unwrap().z_hat;
        let b = ls_estimate(&y, &model).unwrap().z_hat;
        let diff: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff <= 1e-4 * norm);
    }

    #[test]
    fn analytic_examples() {
        let p = CorrelationProfile::uncorrelated(1, 1).unwrap();
        assert!((analytic_mse_dft(&p, 2, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let p = CorrelationProfile::uncorrelated(4, 6).unwrap();
        let v = analytic_mse_dft(&p, 7, 0.5).unwrap();
        assert!((v - 28.0 / (1.0 + 14.0)).abs() < 1e-12);
    }

    #[test]
    fn analytic_matches_error_cov_trace() {
        use crate::pilot::lmmse_error_cov;
        for (i, (rho1, rho2, rho3)) in [(0.1, 0.7, 0.4), (0.8, 0.2, 0.9), (0.5, 0.5, 0.0)].into_iter().enumerate() {
            let p = CorrelationProfile::new(3, 2 + i, rho1, rho2, rho3).unwrap();
            let t_p = p.k + 1 + i;
            let phi = dft_phase_matrix(t_p, p.k).unwrap();
            let cov = lmmse_error_cov(&phi, &build_czz(&p).unwrap(), 0.8, p.m).unwrap();
            let a = analytic_mse_dft(&p, t_p, 0.8).unwrap();
            assert!((cov.trace_real() - a).abs() < 1e-9);
        }
    }

    #[test]
    fn exponential_trace_identities() {
        let inv_oracle = |m: usize, rho: f64| {
            let r = crate::channel::exp_corr_matrix(m, rho).unwrap();
            Cholesky::factor(&r).unwrap().inverse().trace_real()
        };
        let sq_oracle = |m: usize, rho: f64| -> f64 {
            (0..m).flat_map(|i| (0..m).map(move |j| rho.powi(2 * i.abs_diff(j) as i32))).sum()
        };
        assert!((inv_oracle(2, 0.5) - 8.0 / 3.0).abs() < 1e-14);
        assert!((exp_trace_inverse(2, 0.5) - 8.0 / 3.0).abs() < 1e-14);
        assert!((sq_oracle(2, 0.5) - 2.5).abs() < 1e-15);
        assert!((exp_trace_square(2, 0.5) - 2.5).abs() < 1e-14);
        for m in [2, 5, 10] {
            for rho in [0.1, 0.3, 0.6, 0.9] {
                assert!((exp_trace_inverse(m, rho) - inv_oracle(m, rho)).abs() < 1e-10 * inv_oracle(m, rho));
                assert!((exp_trace_square(m, rho) - sq_oracle(m, rho)).abs() < 1e-10 * sq_oracle(m, rho));
            }
        }
    }

    #[test]
    fn asymptotics_track_exact() {
        for m in [2, 10] {
            for rho in [0.3, 0.9] {
                let p = CorrelationProfile::new(m, 10, rho, rho, rho).unwrap();
                let hi = sigma2_from_snr_db(30.0);
                let lo = sigma2_from_snr_db(-40.0);
                for form in [TraceForm::General, TraceForm::Exponential] {
                    let exact = analytic_mse_dft(&p, 11, hi).unwrap();
                    let a = asymptotic_mse(&p, 11, hi, SnrRegime::High, form).unwrap();
                    assert!((a - exact).abs() <= 1e-3 * exact);
                    let exact = analytic_mse_dft(&p, 11, lo).unwrap();
                    let a = asymptotic_mse(&p, 11, lo, SnrRegime::Low, form).unwrap();
                    assert!((a - exact).abs() <= 1e-3 * exact);
                }
                let g = asymptotic_mse(&p, 11, 0.5, SnrRegime::High, TraceForm::General).unwrap();
                let e = asymptotic_mse(&p, 11, 0.5, SnrRegime::High, TraceForm::Exponential).unwrap();
                assert!((g - e).abs() < 1e-10 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn asymptotic_remainders_are_second_order() {
        let p = CorrelationProfile::new(10, 10, 0.9, 0.9, 0.9).unwrap();
        let gap = |s2: f64, regime| {
            (asymptotic_mse(&p, 11, s2, regime, TraceForm::General).unwrap() - analytic_mse_dft(&p, 11, s2).unwrap()).abs()
        };
        // Ten times less (more) noise shrinks the remainder by about 10³ (10²).
        let hi = gap(1e-2, SnrRegime::High) / gap(1e-3, SnrRegime::High);
        assert!((hi / 1e3 - 1.0).abs() < 0.1, "{hi}");
        let lo = gap(1e3, SnrRegime::Low) / gap(1e4, SnrRegime::Low);
        assert!((lo / 1e2 - 1.0).abs() < 0.1, "{lo}");
    }

    #[test]
    fn correlation_lowers_lmmse_and_bounded_at_low_snr() {
        let grid = [0.0, 0.3, 0.6, 0.9];
        for w in grid.windows(2) {
            let a = CorrelationProfile::new(10, 10, w[0], 0.5, 0.5).unwrap();
            let b = CorrelationProfile::new(10, 10, w[1], 0.5, 0.5).unwrap();
            assert!(analytic_mse_dft(&b, 11, 1.0).unwrap() < analytic_mse_dft(&a, 11, 1.0).unwrap());
            let a = CorrelationProfile::new(10, 10, 0.5, w[0], 0.5).unwrap();
            let b = CorrelationProfile::new(10, 10, 0.5, w[1], 0.5).unwrap();
            assert!(analytic_mse_dft(&b, 11, 1.0).unwrap() < analytic_mse_dft(&a, 11, 1.0).unwrap());
        }
        let p = CorrelationProfile::new(10, 10, 0.6, 0.6, 0.6).unwrap();
        assert!(analytic_mse_dft(&p, 11, sigma2_from_snr_db(-60.0)).unwrap() <= 110.0 + 1e-6);
    }

    #[test]
    fn empirical_ls_small() {
        let p = CorrelationProfile::new(4, 3, 0.5, 0.5, 0.5).unwrap();
        let phi = dft_phase_matrix(4, 3).unwrap();
        let s = empirical_mse(Method::Ls, &p, &phi, 2.0, 2000, RngStream::new(1, 0)).unwrap();
        let (d, c) = ls_mse_closed_form(&p, 4, 2.0);
        assert!((s.total / (d + c) - 1.0).abs() < 0.03);
        assert!((s.direct / d - 1.0).abs() < 0.05);
        let g = empirical_mse(Method::Genie, &p, &phi, 2.0, 10, RngStream::new(1, 0)).unwrap();
        assert_eq!(g.total, 0.0);
        assert!(empirical_mse(Method::Dncnn, &p, &phi, 2.0, 10, RngStream::new(1, 0)).is_err());
        assert!(empirical_mse(Method::Ls, &p, &phi, 2.0, 0, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn method_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("mmse".parse::<Method>().is_err());
    }
}
