use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class label: 0 = Non-Demented, 1 = Demented.
pub type Label = u8;

pub const NON_DEMENTED: Label = 0;
pub const DEMENTED: Label = 1;

/// One labeled image, channels-first row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T = f64> {
    pub pixels: Vec<T>,
    pub label: Label,
}

/// A labeled image collection with a common `[C, H, W]` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    shape: [usize; 3],
    samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(shape: [usize; 3], samples: Vec<Sample<T>>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len == 0 {
            return Err(Error::config(format!("image shape must be positive, got {shape:?}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.pixels.len() != len {
                return Err(Error::config(format!(
                    "sample {i} has {} pixels, shape {shape:?} needs {len}",
                    s.pixels.len()
                )));
            }
            if s.label > DEMENTED {
                return Err(Error::config(format!("sample {i} has invalid label {}", s.label)));
            }
        }
        Ok(Self { shape, samples })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample<T>> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Builds a dataset from selected samples of this one.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            shape: self.shape,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        let [c, h, w] = self.shape;
        let mut values = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            values.extend_from_slice(&s.pixels);
            labels.push(s.label as usize);
        }
        Batch::new(Tensor::new(vec![indices.len(), c, h, w], values)?, labels)
    }

    pub fn full_batch(&self) -> Result<Batch<T>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

/// Inputs `[B, C, H, W]` with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f64> {
    inputs: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 4 {
            return Err(Error::Shape {
                expected: vec![labels.len(), 0, 0, 0],
                actual: inputs.dims().to_vec(),
            });
        }
        let b = inputs.dims()[0];
        if b == 0 || labels.len() != b {
            return Err(Error::config(format!(
                "batch has {b} inputs but {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::config(format!("label {bad} outside {{0,1}}")));
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_rejects_bad_labels_and_sizes() {
        let t = Tensor::<f64>::zeros(vec![2, 1, 2, 2]);
        assert!(Batch::new(t.clone(), vec![0, 1]).is_ok());
        assert!(Batch::new(t.clone(), vec![0, 2]).is_err());
        assert!(Batch::new(t, vec![0]).is_err());
    }

    #[test]
    fn dataset_checks_pixel_count() {
        let s = Sample { pixels: vec![0.0f64; 3], label: 0 };
        assert!(Dataset::new([1, 2, 2], vec![s]).is_err());
    }
}
