//! Training phase-shift matrices and the MM phase optimiser.
//!
//! A phase-shift matrix `Φ` is `T_p x (K + 1)`: row `t` holds the LIS
//! configuration during pilot step `t`, prefixed by a fixed `1` for the direct
//! path.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{LisError, Result};
use crate::math::{kron, one_norm, Cholesky, ComplexMatrix, HermitianMatrix, C64};
use crate::rng::RngStream;

const UNIT_MODULUS_TOLERANCE: f64 = 1e-12;

/// Relative slack allowed on the MM objective before an increase is treated
/// as a bug.
pub const MONOTONE_SLACK: f64 = 1e-9;

pub const DEFAULT_MM_EPSILON: f64 = 1e-6;
pub const DEFAULT_MM_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseKind {
    Dft,
    OnOff,
    Random,
    MmOptimized,
}

impl PhaseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseKind::Dft => "dft",
            PhaseKind::OnOff => "onoff",
            PhaseKind::Random => "random",
            PhaseKind::MmOptimized => "mm-optimized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShiftMatrix {
    entries: ComplexMatrix,
    kind: PhaseKind,
}

impl PhaseShiftMatrix {
    /// Validates the structural invariants: unit first column, unit-modulus
    /// entries (or 0/1 entries for on-off designs).
    pub fn new(entries: ComplexMatrix, kind: PhaseKind) -> Result<Self> {
        let one = C64::new(1.0, 0.0);
        if entries.cols() < 2 {
            return Err(LisError::InvalidParameter(
                "phase-shift matrix needs at least one LIS column".into(),
            ));
        }
        if entries.cols() - 1 > entries.rows() {
            return Err(LisError::InsufficientPilots {
                pilots: entries.rows(),
                required: entries.cols(),
            });
        }
        for t in 0..entries.rows() {
            if entries[(t, 0)] != one {
                return Err(LisError::InvalidParameter(format!(
                    "column 0 must be all ones (row {t} holds {})",
                    entries[(t, 0)]
                )));
            }
            for k in 1..entries.cols() {
                let phi = entries[(t, k)];
                let ok = match kind {
                    PhaseKind::OnOff => phi == one || phi == C64::new(0.0, 0.0),
                    _ => (phi.norm() - 1.0).abs() <= UNIT_MODULUS_TOLERANCE,
                };
                if !ok {
                    return Err(LisError::InvalidParameter(format!(
                        "entry ({t}, {k}) = {phi} violates the {} constraint",
                        kind.as_str()
                    )));
                }
            }
        }
        Ok(Self { entries, kind })
    }

    pub fn pilot_len(&self) -> usize {
        self.entries.rows()
    }

    /// Number of LIS elements `K`.
    pub fn elements(&self) -> usize {
        self.entries.cols() - 1
    }

    pub fn kind(&self) -> PhaseKind {
        self.kind
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.entries
    }

    /// `Φ^H Φ`.
    pub fn gram(&self) -> ComplexMatrix {
        self.entries
            .adjoint_matmul(&self.entries)
            .expect("square by construction")
    }

    /// True when `Φ^H Φ = T_p I` within `tol`.
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let mut g = self.gram();
        g.add_diagonal(C64::new(-(self.pilot_len() as f64), 0.0));
        g.max_abs() <= tol
    }

    /// `Φ ⊗ I_M`.
    pub fn expanded(&self, m: usize) -> ComplexMatrix {
        kron(&self.entries, &ComplexMatrix::identity(m))
    }
}

fn check_pilots(t_p: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(LisError::InvalidParameter("K must be at least 1".into()));
    }
    if t_p < k + 1 {
        return Err(LisError::InsufficientPilots { pilots: t_p, required: k + 1 });
    }
    Ok(())
}

/// First `K + 1` columns of the `T_p`-point DFT matrix.
pub fn dft_phase_matrix(t_p: usize, k: usize) -> Result<PhaseShiftMatrix> {
    check_pilots(t_p, k)?;
    let entries = ComplexMatrix::from_fn(t_p, k + 1, |t, c| {
        if c == 0 {
            return C64::new(1.0, 0.0);
        }
        let e = (t * c) % t_p;
        C64::from_polar(1.0, -2.0 * PI * e as f64 / t_p as f64)
    });
    PhaseShiftMatrix::new(entries, PhaseKind::Dft)
}

/// On-off training: the first step has every element off, step `t` then
/// switches on element `t` alone; surplus steps repeat the all-off row.
pub fn onoff_phase_matrix(t_p: usize, k: usize) -> Result<PhaseShiftMatrix> {
    check_pilots(t_p, k)?;
    let entries = ComplexMatrix::from_fn(t_p, k + 1, |t, c| {
        if c == 0 || (t <= k && t == c) {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    PhaseShiftMatrix::new(entries, PhaseKind::OnOff)
}

/// Independent uniform phases on every LIS entry.
pub fn random_phase_matrix(t_p: usize, k: usize, stream: RngStream) -> Result<PhaseShiftMatrix> {
    check_pilots(t_p, k)?;
    let mut rng = stream.rng();
    let entries = ComplexMatrix::from_fn(t_p, k + 1, |_, c| {
        if c == 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
        }
    });
    PhaseShiftMatrix::new(entries, PhaseKind::Random)
}

fn check_dims(phi: &PhaseShiftMatrix, czz: &HermitianMatrix, sigma2: f64, m: usize) -> Result<()> {
    if !(sigma2 > 0.0) {
        return Err(LisError::InvalidParameter(format!("noise variance must be positive, got {sigma2}")));
    }
    let n = m * (phi.elements() + 1);
    if czz.dim() != n {
        return Err(LisError::DimensionMismatch { expected: (n, n), got: czz.shape() });
    }
    Ok(())
}

/// Shared pieces of the LMMSE error covariance for a given `Φ`:
/// `X = Ψ C`, `P = Ψ C Ψ^H + σ² I` and `A = P^{-1} X`, with `Ψ = Φ ⊗ I_M`.
struct LmmseTerms {
    psi: ComplexMatrix,
    x: ComplexMatrix,
    a: ComplexMatrix,
}

impl LmmseTerms {
    fn new(phi: &PhaseShiftMatrix, czz: &HermitianMatrix, sigma2: f64, m: usize) -> Result<Self> {
        let psi = phi.expanded(m);
        let x = psi.matmul(czz)?;
        let mut p = x.matmul(&psi.adjoint())?;
        p.add_diagonal(C64::new(sigma2, 0.0));
        let p = HermitianMatrix::symmetrize(p)?;
        let a = Cholesky::factor(&p)?.solve(&x)?;
        Ok(Self { psi, x, a })
    }

    /// `tr(C) - tr(X^H P^{-1} X)`.
    fn mse(&self, czz: &HermitianMatrix) -> f64 {
        let reduction: f64 = self
            .x
            .as_slice()
            .iter()
            .zip(self.a.as_slice())
            .map(|(x, a)| (x.conj() * a).re)
            .sum();
        czz.trace_real() - reduction
    }

    /// `C - X^H P^{-1} X`.
    fn error_cov(&self, czz: &HermitianMatrix) -> Result<HermitianMatrix> {
        let reduction = self.x.adjoint_matmul(&self.a)?;
        HermitianMatrix::symmetrize(czz.sub(&reduction)?)
    }
}

/// `tr((C_zz^{-1} + (Φ^H Φ ⊗ I_M) / σ²)^{-1})`, evaluated through the
/// equivalent `tr(C - C Ψ^H (Ψ C Ψ^H + σ² I)^{-1} Ψ C)` so only an HPD solve
/// is needed.
pub fn lmmse_mse_of_phi(phi: &PhaseShiftMatrix, czz: &HermitianMatrix, sigma2: f64, m: usize) -> Result<f64> {
    check_dims(phi, czz, sigma2, m)?;
    Ok(LmmseTerms::new(phi, czz, sigma2, m)?.mse(czz))
}

/// Full LMMSE error covariance `(C_zz^{-1} + (Φ^H Φ ⊗ I_M) / σ²)^{-1}`.
pub fn lmmse_error_cov(phi: &PhaseShiftMatrix, czz: &HermitianMatrix, sigma2: f64, m: usize) -> Result<HermitianMatrix> {
    check_dims(phi, czz, sigma2, m)?;
    LmmseTerms::new(phi, czz, sigma2, m)?.error_cov(czz)
}

/// `tr(A A^H Ψ C Ψ^H) - 2 Re tr(C A^H Ψ)`: the part of the surrogate that
/// varies with `Ψ`.
fn surrogate_variable_part(a: &ComplexMatrix, czz: &HermitianMatrix, psi: &ComplexMatrix) -> Result<f64> {
    let a_psi = a.adjoint_matmul(psi)?; // A^H Ψ
    let quad = a_psi.matmul(czz)?.matmul(&a_psi.adjoint())?.trace().re;
    let lin = czz.matmul(&a_psi)?.trace().re;
    Ok(quad - 2.0 * lin)
}

/// Majoriser of the LMMSE MSE around `phi_t`, evaluated at `phi`.
///
/// The variable part of the bound is shifted by its value at `phi_t` so that
/// the surrogate touches the objective there.
pub fn surrogate_value(
    phi: &PhaseShiftMatrix,
    phi_t: &PhaseShiftMatrix,
    czz: &HermitianMatrix,
    sigma2: f64,
    m: usize,
) -> Result<f64> {
    check_dims(phi_t, czz, sigma2, m)?;
    if phi.matrix().shape() != phi_t.matrix().shape() {
        return Err(LisError::DimensionMismatch {
            expected: phi_t.matrix().shape(),
            got: phi.matrix().shape(),
        });
    }
    let terms = LmmseTerms::new(phi_t, czz, sigma2, m)?;
    let at_t = surrogate_variable_part(&terms.a, czz, &terms.psi)?;
    let at_phi = surrogate_variable_part(&terms.a, czz, &phi.expanded(m))?;
    Ok(terms.mse(czz) + at_phi - at_t)
}

/// Bound used for the second majorisation step:
/// `λ_t = ‖C_zz‖₁ ‖A_t A_t^H‖₁`.
pub fn mm_lambda(phi: &PhaseShiftMatrix, czz: &HermitianMatrix, sigma2: f64, m: usize) -> Result<(f64, ComplexMatrix)> {
    check_dims(phi, czz, sigma2, m)?;
    let terms = LmmseTerms::new(phi, czz, sigma2, m)?;
    let aah = terms.a.matmul(&terms.a.adjoint())?;
    Ok((one_norm(czz) * one_norm(&aah), aah))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmTrace {
    /// Number of updates performed.
    pub iterations: usize,
    /// MSE of the initial matrix followed by the MSE after each update.
    pub mse_per_iter: Vec<f64>,
    /// `λ_t` used for each update.
    pub lambda_per_iter: Vec<f64>,
    pub converged: bool,
    pub epsilon: f64,
}

impl MmTrace {
    pub fn final_mse(&self) -> f64 {
        *self.mse_per_iter.last().expect("trace always holds the initial MSE")
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.mse_per_iter
            .windows(2)
            .all(|w| w[1] <= w[0] + slack * w[0].abs())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MmOptions {
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_MM_EPSILON,
            max_iter: DEFAULT_MM_MAX_ITER,
        }
    }
}

/// Projects `B̃` onto the feasible set: unit first column, `exp(j arg B̃)`
/// elsewhere. A zero coefficient maps to phase 0.
fn project_unit_modulus(b_tilde: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(b_tilde.rows(), b_tilde.cols(), |t, k| {
        if k == 0 {
            return C64::new(1.0, 0.0);
        }
        let b = b_tilde[(t, k)];
        let r = b.norm();
        if r == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            b / r
        }
    })
}

/// One MM update from `phi`. Returns the new matrix, `λ_t` and the MSE at
/// `phi`.
fn mm_step(
    phi: &PhaseShiftMatrix,
    czz: &HermitianMatrix,
    czz_one_norm: f64,
    sigma2: f64,
    m: usize,
) -> Result<(PhaseShiftMatrix, f64, f64)> {
    let terms = LmmseTerms::new(phi, czz, sigma2, m)?;
    let mse = terms.mse(czz);
    let a = &terms.a;
    let aah = a.matmul(&a.adjoint())?;
    let lambda = czz_one_norm * one_norm(&aah);

    // B = λ Ψ - A A^H Ψ C + A C, and Ψ C is X.
    let mut b = terms.psi.scale_real(lambda);
    let aah_x = aah.matmul(&terms.x)?;
    let a_c = a.matmul(czz)?;
    for ((bij, p), q) in b.as_mut_slice().iter_mut().zip(aah_x.as_slice()).zip(a_c.as_slice()) {
        *bij += q - p;
    }

    let k1 = phi.elements() + 1;
    let t_p = phi.pilot_len();
    let b_tilde = ComplexMatrix::from_fn(t_p, k1, |t, k| (0..m).map(|i| b[(t * m + i, k * m + i)]).sum());
    let next = PhaseShiftMatrix::new(project_unit_modulus(&b_tilde), PhaseKind::MmOptimized)?;
    Ok((next, lambda, mse))
}

/// Majorisation-minimisation over unit-modulus training matrices with
/// `T_p = K + 1`.
pub fn mm_optimize_phase(
    czz: &HermitianMatrix,
    sigma2: f64,
    m: usize,
    k: usize,
    options: MmOptions,
    init: &PhaseShiftMatrix,
) -> Result<(PhaseShiftMatrix, MmTrace)> {
    if init.elements() != k || init.pilot_len() != k + 1 {
        return Err(LisError::InvalidParameter(format!(
            "MM optimisation needs a (K+1) x (K+1) initial matrix with K={k}, got {:?}",
            init.matrix().shape()
        )));
    }
    if init.kind() == PhaseKind::OnOff {
        return Err(LisError::InvalidParameter("MM initialisation must be unit modulus".into()));
    }
    check_dims(init, czz, sigma2, m)?;

    let c_norm = one_norm(czz);
    let mut current = init.clone();
    let mut trace = MmTrace {
        iterations: 0,
        mse_per_iter: Vec::new(),
        lambda_per_iter: Vec::new(),
        converged: false,
        epsilon: options.epsilon,
    };

    let mut prev_mse = None;
    while trace.iterations < options.max_iter {
        let (next, lambda, mse) = mm_step(&current, czz, c_norm, sigma2, m)?;
        if prev_mse.is_none() {
            trace.mse_per_iter.push(mse);
        }
        let new_mse = lmmse_mse_of_phi(&next, czz, sigma2, m)?;
        if new_mse > mse + MONOTONE_SLACK * mse.abs() {
            return Err(LisError::NonMonotone {
                iteration: trace.iterations + 1,
                previous: mse,
                current: new_mse,
            });
        }
        trace.lambda_per_iter.push(lambda);
        trace.mse_per_iter.push(new_mse);
        trace.iterations += 1;
        current = next;
        prev_mse = Some(new_mse);
        if mse - new_mse <= options.epsilon {
            trace.converged = true;
            break;
        }
    }
    if trace.mse_per_iter.is_empty() {
        trace.mse_per_iter.push(lmmse_mse_of_phi(&current, czz, sigma2, m)?);
    }
    Ok((current, trace))
}
