use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Ordered parameter tensors of a network: weight then bias for each
/// parameterized layer. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters<T = f64> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParameters<T> {
    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(arch: &Architecture) -> Self {
        Self {
            tensors: arch.parameter_dims().into_iter().map(Tensor::zeros).collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn dims(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.dims().to_vec()).collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    /// Rebuilds parameters with this structure from a flat value vector.
    pub fn unflatten(&self, values: &[T]) -> Result<Self> {
        if values.len() != self.total_count() {
            return Err(Error::Length {
                expected: self.total_count(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let chunk = values[offset..offset + t.len()].to_vec();
                offset += t.len();
                Tensor::from_parts_unchecked(t.dims().to_vec(), chunk)
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.dims() == b.dims())
    }

    /// Checks that these parameters fit `arch`.
    pub fn check_architecture(&self, arch: &Architecture) -> Result<()> {
        let expected = arch.parameter_dims();
        if expected.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "parameter set has {} tensors, architecture needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (e, t) in expected.into_iter().zip(&self.tensors) {
            if e != t.dims() {
                return Err(Error::Shape {
                    expected: e,
                    actual: t.dims().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Elementwise combination of two identically shaped parameter sets.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_structure(other) {
            return Err(Error::Shape {
                expected: self.dims().concat(),
                actual: other.dims().concat(),
            });
        }
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| {
                let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::from_parts_unchecked(a.dims().to_vec(), values)
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_structure(other)
            && self
                .flatten()
                .iter()
                .zip(other.flatten())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

/// Glorot-uniform initialization: weights ~ U(-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)); biases zero.
pub fn init_model<T: Scalar>(arch: &Architecture, seed: u64) -> ModelParameters<T> {
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let mut tensors = Vec::new();
    for layer in arch.layers() {
        let (Some((wdims, bdims)), Some((fan_in, fan_out))) = (layer.parameter_dims(), layer.fans())
        else {
            continue;
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = wdims.iter().product();
        let values = (0..n)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        tensors.push(Tensor::from_parts_unchecked(wdims, values));
        tensors.push(Tensor::zeros(bdims));
    }
    ModelParameters { tensors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::LayerSpec;

    fn dense_4_2() -> Architecture {
        Architecture::new(
            [1, 2, 2],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 4, out_features: 2 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Architecture::default_cnn();
        let p: ModelParameters<f64> = init_model(&a, 11);
        let q: ModelParameters<f64> = init_model(&a, 11);
        assert!(p.bitwise_eq(&q));
        let r: ModelParameters<f64> = init_model(&a, 12);
        assert!(!p.bitwise_eq(&r));
    }

    #[test]
    fn biases_are_zero() {
        let a = Architecture::default_cnn();
        let p: ModelParameters<f64> = init_model(&a, 3);
        for bias in p.tensors().iter().skip(1).step_by(2) {
            assert!(bias.values().iter().all(|&v| v == 0.0 && v.is_sign_positive()));
        }
    }

    #[test]
    fn dense_4_2_weights_within_glorot_bound() {
        // fan_in + fan_out = 6, so the bound is sqrt(6/6) = 1.
        let bound = (6.0f64 / 6.0).sqrt();
        for seed in 0..50 {
            let p: ModelParameters<f64> = init_model(&dense_4_2(), seed);
            assert_eq!(p.tensors()[0].len(), 8);
            assert!(p.tensors()[0].values().iter().all(|v| v.abs() < bound));
        }
    }

    #[test]
    fn f32_init_has_same_structure() {
        let a = Architecture::default_cnn();
        let p: ModelParameters<f32> = init_model(&a, 5);
        p.check_architecture(&a).unwrap();
        assert_eq!(p.total_count(), a.parameter_count());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let p: ModelParameters<f64> = init_model(&dense_4_2(), 1);
        assert!(p.unflatten(&[0.0; 3]).is_err());
        let q = p.unflatten(&p.flatten()).unwrap();
        assert!(p.bitwise_eq(&q));
    }
}
