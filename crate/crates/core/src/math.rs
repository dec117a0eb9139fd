//! Dense complex linear algebra.
//!
//! Row-major storage throughout: `data[i * cols + j]` holds `A[i, j]`. The
//! problem sizes handled here stay in the low thousands, so everything is
//! plain dense loops. Hermitian eigenproblems use cyclic Jacobi sweeps in a
//! fixed order; positive definite systems use Cholesky.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{LisError, Result};

pub type C64 = Complex64;

/// Eigenvalues below this are treated as round-off and clamped to zero by
/// [`herm_sqrt`]; anything more negative is rejected.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Relative tolerance used by [`HermitianMatrix::new`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Jacobi sweeps stop once the off-diagonal Frobenius norm falls below this
/// fraction of the full Frobenius norm.
pub const JACOBI_THRESHOLD: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LisError::DimensionMismatch {
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LisError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from real row slices; handy in tests.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn column_vector(values: &[C64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(LisError::DimensionMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Adds `s` to every diagonal entry in place.
    pub fn add_diagonal(&mut self, s: C64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(LisError::DimensionMismatch {
                expected: (self.cols, other.cols),
                got: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, a) in self.row(i).iter().enumerate() {
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^H * other` without materialising the adjoint.
    pub fn adjoint_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(LisError::DimensionMismatch {
                expected: (self.rows, other.cols),
                got: other.shape(),
            });
        }
        let n = other.cols;
        let mut out = Self::zeros(self.cols, n);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, a) in self.row(k).iter().enumerate() {
                let a = a.conj();
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(LisError::DimensionMismatch {
                expected: (self.cols, 1),
                got: (x.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Copies the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Submatrix taking every `stride`-th row and column starting at `offset`.
    pub fn strided(&self, offset: usize, stride: usize) -> Self {
        let r = (self.rows - offset).div_ceil(stride);
        let c = (self.cols - offset).div_ceil(stride);
        Self::from_fn(r, c, |i, j| self[(offset + i * stride, offset + j * stride)])
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A square matrix equal to its own adjoint up to [`HERMITIAN_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(LisError::DimensionMismatch {
                expected: (m.rows(), m.rows()),
                got: m.shape(),
            });
        }
        let scale = m.max_abs();
        let n = m.rows();
        let mut deviation: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                deviation = deviation.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        let tolerance = HERMITIAN_TOLERANCE * scale;
        if deviation > tolerance {
            return Err(LisError::NotHermitian { deviation, tolerance });
        }
        Ok(Self(m))
    }

    /// Replaces `m` with `(m + m^H) / 2`. Used for matrices that are Hermitian
    /// in exact arithmetic but carry round-off from a solve.
    pub fn symmetrize(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(LisError::DimensionMismatch {
                expected: (m.rows(), m.rows()),
                got: m.shape(),
            });
        }
        let n = m.rows();
        let sym = ComplexMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        Ok(Self(sym))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    pub fn from_real_diagonal(values: &[f64]) -> Self {
        let d: Vec<C64> = values.iter().map(|v| C64::new(*v, 0.0)).collect();
        Self(ComplexMatrix::diag(&d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace_real(&self) -> f64 {
        self.0.trace().re
    }
}

impl std::ops::Deref for HermitianMatrix {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    ComplexMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Maximum absolute column sum.
pub fn one_norm(a: &ComplexMatrix) -> f64 {
    (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower-triangular Cholesky factor `L` with `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: ComplexMatrix,
}

impl Cholesky {
    pub fn factor(a: &HermitianMatrix) -> Result<Self> {
        let n = a.dim();
        let floor = if n == 0 { 0.0 } else { 1e-12 * a.trace_real() / n as f64 };
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > floor) || !d.is_finite() {
                return Err(LisError::NotPd { pivot: d, index: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &ComplexMatrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `A x = b` for a single right-hand side, in place.
    pub fn solve_vec_in_place(&self, b: &mut [C64]) {
        let n = self.dim();
        let l = &self.l;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * b[k];
            }
            b[i] = s / l[(i, i)].re;
        }
    }

    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(LisError::DimensionMismatch {
                expected: (n, b.cols()),
                got: b.shape(),
            });
        }
        // Work column-major on a transposed copy so each column is contiguous.
        let mut bt = b.transpose();
        for j in 0..b.cols() {
            let col = &mut bt.as_mut_slice()[j * n..(j + 1) * n];
            self.solve_vec_in_place(col);
        }
        Ok(bt.transpose())
    }

    pub fn inverse(&self) -> HermitianMatrix {
        let inv = self
            .solve(&ComplexMatrix::identity(self.dim()))
            .expect("identity has matching dimensions");
        HermitianMatrix::symmetrize(inv).expect("square")
    }
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub fn solve_hpd(a: &HermitianMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    Cholesky::factor(a)?.solve(b)
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn eig_hermitian(a: &HermitianMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    let n = a.dim();
    let mut m = a.as_matrix().clone();
    let mut v = ComplexMatrix::identity(n);
    let total = m.frobenius_norm();

    let off_norm = |m: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= JACOBI_THRESHOLD * total || total == 0.0 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re.abs()).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(LisError::NoConvergence {
                sweeps,
                off_norm: off,
                condition: max / min,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                jacobi_rotate(&mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let values: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = ComplexMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((sorted_values, sorted_vectors))
}

/// One complex Jacobi rotation annihilating `m[p, q]`. The rotation is
/// `J = D P` where `D` strips the phase of `m[p, q]` and `P` is the usual
/// real Jacobi rotation.
fn jacobi_rotate(m: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let n = m.rows();
    let phase = apq / r;
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let theta = (aqq - app) / (2.0 * r);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let jpp = C64::new(c, 0.0);
    let jpq = C64::new(s, 0.0);
    let jqp = -phase.conj() * s;
    let jqq = phase.conj() * c;

    for k in 0..n {
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        m[(k, p)] = akp * jpp + akq * jqp;
        m[(k, q)] = akp * jpq + akq * jqq;
    }
    for k in 0..n {
        let apk = m[(p, k)];
        let aqk = m[(q, k)];
        m[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
        m[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
    }
    m[(p, q)] = C64::new(0.0, 0.0);
    m[(q, p)] = C64::new(0.0, 0.0);
    m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = C64::new(m[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * jpp + vkq * jqp;
        v[(k, q)] = vkp * jpq + vkq * jqq;
    }
}

/// Principal square root of a positive semidefinite Hermitian matrix.
pub fn herm_sqrt(r: &HermitianMatrix) -> Result<ComplexMatrix> {
    let (values, vectors) = eig_hermitian(r)?;
    if let Some(&min) = values.first() {
        if min < -PSD_TOLERANCE {
            return Err(LisError::NotPsd { min_eigenvalue: min });
        }
    }
    let n = r.dim();
    let roots: Vec<f64> = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| vectors[(i, k)] * roots[k] * vectors[(j, k)].conj())
            .sum()
    }))
}
