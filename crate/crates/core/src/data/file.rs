//! Flat binary dataset files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QFLD" | version u16 | samples u32 | channels u32 | height u32 | width u32
//! then per sample: C*H*W binary64 pixels (row-major) | label u8
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Sample};
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 4] = b"QFLD";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

fn u32_field(value: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(value)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::config(format!("{what} {value} does not fit in 32 bits")))
}

pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<u8>> {
    let [c, h, w] = dataset.shape();
    let per = c * h * w;
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * (per * 8 + 1));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(dataset.len(), "sample count")?);
    for (d, name) in [(c, "channels"), (h, "height"), (w, "width")] {
        out.extend_from_slice(&u32_field(d, name)?);
    }
    for s in dataset.samples() {
        for &v in &s.pixels {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out.push(s.label);
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

pub fn read_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format("missing QFLD magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = read_u32(bytes, 6);
    let shape = [read_u32(bytes, 10), read_u32(bytes, 14), read_u32(bytes, 18)];
    let per: usize = shape.iter().product();
    let record = per
        .checked_mul(8)
        .and_then(|b| b.checked_add(1))
        .ok_or_else(|| Error::Format("image dims overflow".into()))?;
    let expected = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("sample count overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let mut samples = Vec::with_capacity(n);
    for rec in bytes[HEADER_LEN..].chunks_exact(record) {
        let pixels = rec[..per * 8]
            .chunks_exact(8)
            .map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect();
        samples.push(Sample {
            pixels,
            label: rec[per * 8],
        });
    }
    Dataset::new(shape, samples).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_dataset_file<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_dataset(dataset)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    read_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticConfig};

    fn small() -> Dataset<f64> {
        generate_dataset(&SyntheticConfig {
            samples_per_class: 3,
            image_size: (8, 8),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let ds = Dataset::new(
            [1, 1, 2],
            vec![Sample { pixels: vec![1.0f64, -0.5], label: 1 }],
        )
        .unwrap();
        let bytes = write_dataset(&ds).unwrap();
        let mut expect = b"QFLD".to_vec();
        expect.extend_from_slice(&[1, 0]);
        expect.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-0.5f64).to_le_bytes());
        expect.push(1);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn roundtrip_and_errors() {
        let ds = small();
        let bytes = write_dataset(&ds).unwrap();
        assert_eq!(read_dataset::<f64>(&bytes).unwrap(), ds);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset::<f64>(&bad), Err(Error::Format(_))));
        assert!(matches!(read_dataset::<f64>(&bytes[..bytes.len() - 1]), Err(Error::Length { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(read_dataset::<f64>(&v2), Err(Error::Version { found: 2, .. })));
        let mut bad_label = bytes;
        let last = bad_label.len() - 1;
        bad_label[last] = 7;
        assert!(matches!(read_dataset::<f64>(&bad_label), Err(Error::Format(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.qfld");
        let ds = small();
        write_dataset_file(&ds, &path).unwrap();
        assert_eq!(read_dataset_file::<f64>(&path).unwrap(), ds);
        assert!(matches!(
            read_dataset_file::<f64>(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
