use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{Dataset, NUM_CLASSES};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Disjoint client shards covering a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T = f64> {
    shards: Vec<Dataset<T>>,
    // Positions of each shard's samples in the source dataset.
    indices: Vec<Vec<usize>>,
}

impl<T: Scalar> Partition<T> {
    pub fn shards(&self) -> &[Dataset<T>] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Dataset<T>> {
        self.shards
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// N_i per client.
    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Dataset::len).collect()
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }
}

/// Splits `n` into `k` sizes differing by at most one, larger ones first.
fn near_equal_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Interleaves per-class index lists so every prefix tracks the global
/// class proportions to within one sample per class.
fn stratified_merge(mut pools: Vec<Vec<usize>>) -> Vec<usize> {
    let totals: Vec<usize> = pools.iter().map(Vec::len).collect();
    let n: usize = totals.iter().sum();
    let mut taken = vec![0usize; pools.len()];
    for p in pools.iter_mut() {
        p.reverse();
    }
    let mut out = Vec::with_capacity(n);
    for t in 1..=n {
        let pick = (0..pools.len())
            .filter(|&c| !pools[c].is_empty())
            .max_by_key(|&c| {
                // deficit scaled by n: totals[c] * t - taken[c] * n; ties go to the lower class
                (
                    (totals[c] * t) as i128 - (taken[c] * n) as i128,
                    std::cmp::Reverse(c),
                )
            })
            .expect("a pool is non-empty while t <= n");
        out.push(pools[pick].pop().expect("non-empty"));
        taken[pick] += 1;
    }
    out
}

fn check_clients<T: Scalar>(dataset: &Dataset<T>, num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::config("num_clients must be >= 1"));
    }
    if num_clients > dataset.len() {
        return Err(Error::config(format!(
            "num_clients ({num_clients}) exceeds dataset size ({})",
            dataset.len()
        )));
    }
    Ok(())
}

fn shuffled_class_pools<T: Scalar>(dataset: &Dataset<T>, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in dataset.samples().iter().enumerate() {
        pools[s.label as usize].push(i);
    }
    for p in pools.iter_mut() {
        p.shuffle(rng);
    }
    pools
}

/// Shuffled, class-stratified, near-equal contiguous shards.
pub fn partition_iid<T: Scalar>(dataset: &Dataset<T>, num_clients: usize, seed: u64) -> Result<Partition<T>> {
    partition_label_skew(dataset, num_clients, 0.0, seed)
}

/// Like [`partition_iid`], but a fraction `skew` of each client's shard is
/// drawn from one dominant class, assigned round-robin by client index.
pub fn partition_label_skew<T: Scalar>(
    dataset: &Dataset<T>,
    num_clients: usize,
    skew: f64,
    seed: u64,
) -> Result<Partition<T>> {
    check_clients(dataset, num_clients)?;
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::config(format!("skew must be in [0, 1], got {skew}")));
    }
    let mut rng = stream_rng(seed, Stream::Partition, &[num_clients as u64]);
    let mut pools = shuffled_class_pools(dataset, &mut rng);
    let sizes = near_equal_sizes(dataset.len(), num_clients);

    let mut indices: Vec<Vec<usize>> = Vec::with_capacity(num_clients);
    for (i, &size) in sizes.iter().enumerate() {
        let dominant = i % NUM_CLASSES;
        let want = (skew * size as f64).round() as usize;
        let take = want.min(pools[dominant].len());
        indices.push(pools[dominant].drain(..take).collect());
    }
    let mut rest = stratified_merge(pools).into_iter();
    for (shard, &size) in indices.iter_mut().zip(&sizes) {
        let missing = size - shard.len();
        shard.extend(rest.by_ref().take(missing));
    }
    debug_assert!(rest.next().is_none());

    let shards = indices.iter().map(|idx| dataset.subset(idx)).collect();
    Ok(Partition { shards, indices })
}

/// Stratified, deterministic split into (train, test); each keeps the
/// source order.
pub fn train_test_split<T: Scalar>(
    dataset: &Dataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Split, &[]);
    let pools = shuffled_class_pools(dataset, &mut rng);
    let mut in_test = vec![false; dataset.len()];
    for pool in &pools {
        let n_test = (pool.len() as f64 * test_fraction).round() as usize;
        for &i in &pool[..n_test] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| in_test[i]);
    if test.is_empty() || train.is_empty() {
        return Err(Error::config(format!(
            "test_fraction {test_fraction} leaves an empty split ({} train / {} test)",
            train.len(),
            test.len()
        )));
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sample;

    fn toy(n0: usize, n1: usize) -> Dataset<f64> {
        // pixel value encodes the sample's identity
        let samples = (0..n0 + n1)
            .map(|i| Sample { pixels: vec![i as f64], label: u8::from(i >= n0) })
            .collect();
        Dataset::new([1, 1, 1], samples).unwrap()
    }

    fn ids(ds: &Dataset<f64>) -> Vec<usize> {
        ds.samples().iter().map(|s| s.pixels[0] as usize).collect()
    }

    fn assert_exact_partition(p: &Partition<f64>, n: usize) {
        let mut all: Vec<usize> = p.shards().iter().flat_map(ids).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (shard, idx) in p.shards().iter().zip(p.indices()) {
            assert_eq!(&ids(shard), idx);
        }
    }

    #[test]
    fn iid_even_sizes() {
        let p = partition_iid(&toy(50, 50), 4, 1).unwrap();
        assert_eq!(p.sizes(), vec![25, 25, 25, 25]);
        assert_exact_partition(&p, 100);
    }

    #[test]
    fn iid_remainder_sizes() {
        let p = partition_iid(&toy(5, 5), 3, 1).unwrap();
        let mut sizes = p.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert_exact_partition(&p, 10);
    }

    #[test]
    fn iid_label_proportions_track_global() {
        let ds = toy(130, 70);
        let global = 70.0 / 200.0;
        for seed in 0..20 {
            let p = partition_iid(&ds, 4, seed).unwrap();
            for shard in p.shards() {
                let frac = shard.count_label(1) as f64 / shard.len() as f64;
                assert!((frac - global).abs() <= 0.10, "seed {seed}: {frac}");
            }
        }
    }

    #[test]
    fn too_many_clients() {
        assert!(partition_iid(&toy(1, 1), 3, 0).is_err());
        assert!(partition_iid(&toy(1, 1), 0, 0).is_err());
    }

    #[test]
    fn skew_zero_is_iid() {
        let ds = toy(40, 60);
        assert_eq!(partition_label_skew(&ds, 3, 0.0, 4).unwrap(), partition_iid(&ds, 3, 4).unwrap());
    }

    #[test]
    fn full_skew_gives_single_class_clients() {
        let p = partition_label_skew(&toy(50, 50), 2, 1.0, 2).unwrap();
        assert_eq!(p.shards()[0].count_label(0), 50);
        assert_eq!(p.shards()[1].count_label(1), 50);
        assert_exact_partition(&p, 100);
    }

    #[test]
    fn half_skew_dominant_fraction() {
        // expectation 0.5 * 1 + 0.5 * 0.5 = 0.75
        for seed in 0..10 {
            let p = partition_label_skew(&toy(100, 100), 2, 0.5, seed).unwrap();
            for (i, shard) in p.shards().iter().enumerate() {
                let frac = shard.count_label((i % 2) as u8) as f64 / shard.len() as f64;
                assert!((frac - 0.75).abs() <= 0.1, "{frac}");
            }
            assert_exact_partition(&p, 200);
        }
    }

    #[test]
    fn skew_out_of_range() {
        assert!(partition_label_skew(&toy(5, 5), 2, 1.5, 0).is_err());
    }

    #[test]
    fn stratified_split_counts() {
        let ds = toy(50, 50);
        let (train, test) = train_test_split(&ds, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert_eq!(test.count_label(0), 10);
        assert_eq!(test.count_label(1), 10);
        let mut all: Vec<usize> = ids(&train).into_iter().chain(ids(&test)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_test_split(&ds, 0.2, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_rejects_empty_side() {
        assert!(train_test_split(&toy(1, 1), 0.1, 0).is_err());
        assert!(train_test_split(&toy(5, 5), 1.0, 0).is_err());
    }

    #[test]
    fn merge_keeps_prefixes_balanced() {
        let merged = stratified_merge(vec![(0..30).collect(), (100..110).collect()]);
        assert_eq!(merged.len(), 40);
        for t in 1..=40 {
            let ones = merged[..t].iter().filter(|&&i| i >= 100).count() as f64;
            assert!((ones - t as f64 * 0.25).abs() <= 1.0);
        }
    }
}
