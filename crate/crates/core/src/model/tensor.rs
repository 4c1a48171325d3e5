use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f64> {
    dims: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::config(format!("tensor dims must be positive, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::Length {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            values: vec![T::zero(); n],
        }
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            values: vec![value; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same values, new dims. Element count must match.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.values)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.dims[self.dims.len() - 1];
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, values: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Self { dims, values }
    }
}
