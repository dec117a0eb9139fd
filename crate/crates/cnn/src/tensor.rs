//! Dense NHWC tensors.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{CnnError, Result};

/// Scalar type of the tensor engine. Training and inference use `f32`; `f64`
/// is used for finite-difference gradient checks.
pub trait Real: Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }
}

impl<T> Real for T where T: Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Send + Sync + 'static {}

/// `(batch, height, width, channels)` tensor stored row-major with the channel
/// index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

pub type Tensor4 = Tensor<f32>;

impl<T: Real> Tensor<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(CnnError::ShapeMismatch(format!("{dims:?} needs {n} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::ShapeMismatch("tensor values must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        ((b * self.dims[1] + i) * self.dims[2] + j) * self.dims[3] + c
    }

    pub fn get(&self, b: usize, i: usize, j: usize, c: usize) -> T {
        self.data[self.offset(b, i, j, c)]
    }

    pub fn set(&mut self, b: usize, i: usize, j: usize, c: usize, v: T) {
        let o = self.offset(b, i, j, c);
        self.data[o] = v;
    }

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Copies the listed batch items into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let n = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &b in indices {
            data.extend_from_slice(self.item(b));
        }
        Self { dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]], data }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| CnnError::ShapeMismatch("nothing to concatenate".into()))?;
        let [_, h, w, c] = first.dims;
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.dims[1..] != [h, w, c] {
                return Err(CnnError::ShapeMismatch(format!("{:?} vs {:?}", p.dims, first.dims)));
            }
            data.extend_from_slice(&p.data);
            batch += p.dims[0];
        }
        Ok(Self { dims: [batch, h, w, c], data })
    }

    /// Keeps the first `c` channels.
    pub fn leading_channels(&self, c: usize) -> Self {
        let cs = self.channels();
        if c == cs {
            return self.clone();
        }
        let data = self.data.chunks_exact(cs).flat_map(|px| px[..c].iter().copied()).collect();
        Self { dims: [self.dims[0], self.dims[1], self.dims[2], c], data }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { dims: self.dims, data: self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect() })
    }

    /// `Σ (self − other)²`.
    pub fn squared_distance(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b) * (*a - *b)).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(CnnError::ShapeMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}
