//! Server-side weight aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// `w = Σ c_i w_i`
    #[default]
    Weighted,
    /// `w' = w + Σ c_i (w_i - w)`
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `c_i = N_i / Σ_j N_j` (FedAvg).
    #[default]
    ByTotalSamples,
    /// `c_i = N_i / K` with K the number of contributing clients; the
    /// coefficients do not sum to one in general.
    ByClientCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationMode {
    pub rule: AggregationRule,
    pub normalization: Normalization,
}

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate<T = f64> {
    pub client_id: usize,
    pub samples: usize,
    pub weights: ModelParameters<T>,
}

pub fn coefficients<T: Scalar>(updates: &[ClientUpdate<T>], normalization: Normalization) -> Result<Vec<T>> {
    if updates.is_empty() {
        return Err(Error::Protocol("no non-aborted updates to aggregate".into()));
    }
    if let Some(u) = updates.iter().find(|u| u.samples == 0) {
        return Err(Error::config(format!("client {} reports zero samples", u.client_id)));
    }
    let denom = match normalization {
        Normalization::ByTotalSamples => updates.iter().map(|u| u.samples).sum::<usize>(),
        Normalization::ByClientCount => updates.len(),
    };
    let denom = T::from_f64_lossy(denom as f64);
    Ok(updates
        .iter()
        .map(|u| T::from_f64_lossy(u.samples as f64) / denom)
        .collect())
}

fn check_structure<T: Scalar>(reference: &ModelParameters<T>, updates: &[ClientUpdate<T>]) -> Result<()> {
    for u in updates {
        if !u.weights.same_structure(reference) {
            return Err(Error::Shape {
                expected: reference.dims().concat(),
                actual: u.weights.dims().concat(),
            });
        }
    }
    Ok(())
}

/// Weighted average of client weights.
pub fn server_aggregate<T: Scalar>(
    updates: &[ClientUpdate<T>],
    normalization: Normalization,
) -> Result<ModelParameters<T>> {
    let coef = coefficients(updates, normalization)?;
    check_structure(&updates[0].weights, updates)?;
    let mut acc = updates[0].weights.zip_map(&updates[0].weights, |w, _| coef[0] * w)?;
    for (u, &ci) in updates.iter().zip(&coef).skip(1) {
        acc = acc.zip_map(&u.weights, |a, w| a + ci * w)?;
    }
    Ok(acc)
}

/// Moves the global model by the weighted sum of client deltas.
pub fn server_incremental_update<T: Scalar>(
    global: &ModelParameters<T>,
    updates: &[ClientUpdate<T>],
    normalization: Normalization,
) -> Result<ModelParameters<T>> {
    let coef = coefficients(updates, normalization)?;
    check_structure(global, updates)?;
    let mut step = global.zip_map(global, |_, _| T::zero())?;
    for (u, &ci) in updates.iter().zip(&coef) {
        let delta = u.weights.zip_map(global, |w, g| w - g)?;
        step = step.zip_map(&delta, |s, d| s + ci * d)?;
    }
    global.zip_map(&step, |g, s| g + s)
}

/// Dispatches on the configured rule.
pub fn aggregate<T: Scalar>(
    global: &ModelParameters<T>,
    updates: &[ClientUpdate<T>],
    mode: AggregationMode,
) -> Result<ModelParameters<T>> {
    match mode.rule {
        AggregationRule::Weighted => {
            check_structure(global, updates)?;
            server_aggregate(updates, mode.normalization)
        }
        AggregationRule::Incremental => server_incremental_update(global, updates, mode.normalization),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;
    use proptest::prelude::*;

    fn scalar(v: f64) -> ModelParameters<f64> {
        ModelParameters::from_tensors(vec![Tensor::new(vec![1], vec![v]).unwrap()])
    }

    fn upd(id: usize, n: usize, w: ModelParameters<f64>) -> ClientUpdate<f64> {
        ClientUpdate { client_id: id, samples: n, weights: w }
    }

    #[test]
    fn weighted_by_samples() {
        let ups = [upd(0, 1, scalar(0.0)), upd(1, 3, scalar(4.0))];
        assert_eq!(server_aggregate(&ups, Normalization::ByTotalSamples).unwrap().flatten(), vec![3.0]);
    }

    #[test]
    fn client_count_coefficients() {
        // N_i / (client count): (1/2)·0 + (3/2)·4 = 6
        let ups = [upd(0, 1, scalar(0.0)), upd(1, 3, scalar(4.0))];
        assert_eq!(server_aggregate(&ups, Normalization::ByClientCount).unwrap().flatten(), vec![6.0]);
    }

    #[test]
    fn identical_updates_reproduce_weights() {
        let w = ModelParameters::from_tensors(vec![
            Tensor::new(vec![3], vec![0.123456789, -0.987654321, 0.5]).unwrap(),
        ]);
        let ups: Vec<_> = [3, 7, 11, 2].iter().enumerate().map(|(i, &n)| upd(i, n, w.clone())).collect();
        let agg = server_aggregate(&ups, Normalization::ByTotalSamples).unwrap();
        for (a, b) in agg.flatten().iter().zip(w.flatten()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn empty_updates_fail() {
        assert!(matches!(
            server_aggregate::<f64>(&[], Normalization::ByTotalSamples),
            Err(Error::Protocol(_))
        ));
        assert!(server_incremental_update(&scalar(1.0), &[], Normalization::ByTotalSamples).is_err());
    }

    #[test]
    fn mismatched_structure_fails() {
        let other = ModelParameters::from_tensors(vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()]);
        let ups = [upd(0, 1, scalar(0.0)), upd(1, 1, other)];
        assert!(matches!(server_aggregate(&ups, Normalization::ByTotalSamples), Err(Error::Shape { .. })));
    }

    #[test]
    fn incremental_zero_deltas_keep_global() {
        let g = scalar(2.5);
        let ups = [upd(0, 4, g.clone()), upd(1, 6, g.clone())];
        let out = server_incremental_update(&g, &ups, Normalization::ByTotalSamples).unwrap();
        assert!(out.bitwise_eq(&g));
    }

    #[test]
    fn incremental_single_client_takes_its_weights() {
        let out = server_incremental_update(&scalar(1.0), &[upd(0, 5, scalar(-3.0))], Normalization::ByTotalSamples)
            .unwrap();
        assert_eq!(out.flatten(), vec![-3.0]);
    }

    proptest! {
        #[test]
        fn direct_and_incremental_agree_when_coefficients_sum_to_one(
            sizes in prop::collection::vec(1usize..500, 2..9),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let mut vec_of = |len: usize| {
                let v = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
                ModelParameters::from_tensors(vec![Tensor::new(vec![len], v).unwrap()])
            };
            let global = vec_of(16);
            let ups: Vec<_> = sizes.iter().enumerate().map(|(i, &n)| upd(i, n, vec_of(16))).collect();
            let a = server_aggregate(&ups, Normalization::ByTotalSamples).unwrap();
            let b = server_incremental_update(&global, &ups, Normalization::ByTotalSamples).unwrap();
            for (x, y) in a.flatten().iter().zip(b.flatten()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
