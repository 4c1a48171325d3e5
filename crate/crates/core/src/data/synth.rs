use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Label, Sample, DEMENTED, NON_DEMENTED};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub samples_per_class: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 250,
            image_size: (16, 16),
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 8 || w < 8 {
            return Err(Error::config(format!(
                "image_size must be at least 8x8 (permitted: H, W >= 8), got {h}x{w}"
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Noise-free image for a class: disc of radius H/4, or ring with radii
/// H/4..H/3, centered, feature intensity 1 on a 0 background.
pub fn template(label: Label, height: usize, width: usize) -> Vec<f64> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let inner = height as f64 / 4.0;
    let outer = height as f64 / 3.0;
    let mut img = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let lit = if label == NON_DEMENTED {
                d <= inner
            } else {
                d >= inner && d <= outer
            };
            img.push(if lit { 1.0 } else { 0.0 });
        }
    }
    img
}

/// Class-major dataset: all class-0 samples, then all class-1 samples.
pub fn generate_dataset<T: Scalar>(cfg: &SyntheticConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let (h, w) = cfg.image_size;
    let mut rng = stream_rng(cfg.seed, Stream::Data, &[]);
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::config(format!("noise_sigma: {e}")))?;
    let mut samples = Vec::with_capacity(2 * cfg.samples_per_class);
    for label in [NON_DEMENTED, DEMENTED] {
        let base = template(label, h, w);
        for _ in 0..cfg.samples_per_class {
            let pixels = base
                .iter()
                .map(|&v| {
                    let v = if cfg.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { v };
                    T::from_f64_lossy(v.clamp(0.0, 1.0))
                })
                .collect();
            samples.push(Sample { pixels, label });
        }
    }
    Dataset::new([1, h, w], samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_samples_repeat_two_templates() {
        let cfg = SyntheticConfig { samples_per_class: 3, noise_sigma: 0.0, ..Default::default() };
        let ds: Dataset<f64> = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 6);
        let t0 = template(0, 16, 16);
        let t1 = template(1, 16, 16);
        assert_ne!(t0, t1);
        for s in ds.samples() {
            assert_eq!(s.pixels, if s.label == 0 { t0.clone() } else { t1.clone() });
        }
    }

    #[test]
    fn templates_have_expected_structure() {
        let disc = template(0, 16, 16);
        let ring = template(1, 16, 16);
        // center pixel (7,7) lit only in the disc
        assert_eq!(disc[7 * 16 + 7], 1.0);
        assert_eq!(ring[7 * 16 + 7], 0.0);
        // corners dark in both
        assert_eq!(disc[0], 0.0);
        assert_eq!(ring[0], 0.0);
        assert!(ring.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn same_config_same_bits() {
        let cfg = SyntheticConfig { samples_per_class: 20, seed: 9, ..Default::default() };
        let a: Dataset<f64> = generate_dataset(&cfg).unwrap();
        let b: Dataset<f64> = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().iter().flat_map(|s| &s.pixels).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_small_images() {
        let cfg = SyntheticConfig { image_size: (7, 16), ..Default::default() };
        assert!(generate_dataset::<f64>(&cfg).is_err());
    }
}
