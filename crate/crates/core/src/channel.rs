//! Correlated Rayleigh channel model for the UE-LIS-BS link.
//!
//! The unknown vector is `z = [h_d; v_1; ...; v_K]` where `v_i` is the
//! `i`-th column of the cascaded channel `V = H_lb diag(h_ul)`.

use rand::Rng;

use crate::error::{LisError, Result};
use crate::math::{herm_sqrt, ComplexMatrix, HermitianMatrix, C64};
use crate::rng::{complex_normal, complex_normal_vec, RngStream};

/// Antenna/element counts and exponential correlation coefficients for the
/// BS-side direct link (`rho1`), BS side of the LIS link (`rho2`) and the
/// LIS side (`rho3`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationProfile {
    pub m: usize,
    pub k: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl CorrelationProfile {
    pub fn new(m: usize, k: usize, rho1: f64, rho2: f64, rho3: f64) -> Result<Self> {
        let p = Self { m, k, rho1, rho2, rho3 };
        p.validate()?;
        Ok(p)
    }

    pub fn uncorrelated(m: usize, k: usize) -> Result<Self> {
        Self::new(m, k, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(LisError::InvalidParameter(format!(
                "M and K must be at least 1 (got M={}, K={})",
                self.m, self.k
            )));
        }
        for rho in [self.rho1, self.rho2, self.rho3] {
            check_rho(rho)?;
        }
        Ok(())
    }

    /// Length of `z`, i.e. `M (K + 1)`.
    pub fn unknowns(&self) -> usize {
        self.m * (self.k + 1)
    }

    pub fn r_ub(&self) -> Result<HermitianMatrix> {
        exp_corr_matrix(self.m, self.rho1)
    }

    pub fn r_lb(&self) -> Result<HermitianMatrix> {
        exp_corr_matrix(self.m, self.rho2)
    }

    pub fn s_lb(&self) -> Result<HermitianMatrix> {
        exp_corr_matrix(self.k, self.rho3)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(LisError::InvalidRho(rho))
    }
}

/// `n x n` matrix with entries `rho^|i-j|`.
pub fn exp_corr_matrix(n: usize, rho: f64) -> Result<HermitianMatrix> {
    check_rho(rho)?;
    let m = ComplexMatrix::from_fn(n, n, |i, j| C64::new(rho.powi(i.abs_diff(j) as i32), 0.0));
    HermitianMatrix::new(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_d: Vec<C64>,
    pub h_lb: ComplexMatrix,
    pub h_ul: Vec<C64>,
    pub v: ComplexMatrix,
    pub z: Vec<C64>,
}

impl ChannelRealization {
    /// Assembles `V` and `z` from the three physical channels.
    pub fn from_parts(h_d: Vec<C64>, h_lb: ComplexMatrix, h_ul: Vec<C64>) -> Self {
        let (m, k) = h_lb.shape();
        let v = ComplexMatrix::from_fn(m, k, |r, c| h_lb[(r, c)] * h_ul[c]);
        let z = stack_z(&h_d, &v);
        Self { h_d, h_lb, h_ul, v, z }
    }

    pub fn direct(&self) -> &[C64] {
        &self.z[..self.h_d.len()]
    }

    pub fn cascaded(&self) -> &[C64] {
        &self.z[self.h_d.len()..]
    }
}

/// `[h_d; v_1; ...; v_K]`.
pub fn stack_z(h_d: &[C64], v: &ComplexMatrix) -> Vec<C64> {
    let mut z = Vec::with_capacity(h_d.len() * (v.cols() + 1));
    z.extend_from_slice(h_d);
    for c in 0..v.cols() {
        z.extend(v.column(c));
    }
    z
}

/// Splits `z` back into `(h_d, V)`.
pub fn split_z(z: &[C64], m: usize) -> (Vec<C64>, ComplexMatrix) {
    let k = z.len() / m - 1;
    let v = ComplexMatrix::from_fn(m, k, |r, c| z[(c + 1) * m + r]);
    (z[..m].to_vec(), v)
}

/// Draws channel realizations for a fixed profile. The correlation square
/// roots are computed once at construction.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    profile: CorrelationProfile,
    r_ub_sqrt: ComplexMatrix,
    r_lb_sqrt: ComplexMatrix,
    s_lb_sqrt: ComplexMatrix,
}

impl ChannelSampler {
    pub fn new(profile: CorrelationProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            r_ub_sqrt: herm_sqrt(&profile.r_ub()?)?,
            r_lb_sqrt: herm_sqrt(&profile.r_lb()?)?,
            s_lb_sqrt: herm_sqrt(&profile.s_lb()?)?,
        })
    }

    pub fn profile(&self) -> &CorrelationProfile {
        &self.profile
    }

    pub fn sample(&self, stream: RngStream) -> ChannelRealization {
        self.sample_with(&mut stream.rng())
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let (m, k) = (self.profile.m, self.profile.k);
        let h_wd = complex_normal_vec(rng, m);
        let h_d = self.r_ub_sqrt.matvec(&h_wd).expect("dimensions fixed by profile");

        let h_w = ComplexMatrix::from_fn(m, k, |_, _| complex_normal(rng));
        let h_lb = self
            .r_lb_sqrt
            .matmul(&h_w)
            .and_then(|t| t.matmul(&self.s_lb_sqrt))
            .expect("dimensions fixed by profile");

        let h_ul = complex_normal_vec(rng, k);
        ChannelRealization::from_parts(h_d, h_lb, h_ul)
    }
}

/// Convenience wrapper building a sampler for one draw.
pub fn sample_channel(p: &CorrelationProfile, stream: RngStream) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(*p)?.sample(stream))
}

/// Prior covariance of `z`: `blkdiag(R_ub, R_1, ..., R_K)` with `R_i` the
/// `i`-th diagonal `M x M` block of `S_lb ⊗ R_lb`.
pub fn build_czz(p: &CorrelationProfile) -> Result<HermitianMatrix> {
    p.validate()?;
    let m = p.m;
    let r_ub = p.r_ub()?;
    let r_lb = p.r_lb()?;
    let s_lb = p.s_lb()?;

    // R_i = S_lb[i, i] * R_lb, and S_lb has a unit diagonal.
    debug_assert!((0..p.k).all(|i| {
        let r_i = r_lb.scale(s_lb[(i, i)]);
        r_i.sub(&r_lb).map(|d| d.max_abs() == 0.0).unwrap_or(false)
    }));

    let n = p.unknowns();
    let mut czz = ComplexMatrix::zeros(n, n);
    for b in 0..=p.k {
        let block = if b == 0 { &r_ub } else { &r_lb };
        for i in 0..m {
            for j in 0..m {
                czz[(b * m + i, b * m + j)] = block[(i, j)];
            }
        }
    }
    HermitianMatrix::new(czz)
}
