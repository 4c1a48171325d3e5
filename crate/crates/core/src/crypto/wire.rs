//! Canonical weight bytes.
//!
//! ```text
//! "QFLW" | version u16 LE | tensor count u16 LE
//! per tensor: rank u8 | dims u32 LE each | values binary64 LE, row-major
//! ```

use crate::error::{Error, Result};
use crate::model::{ModelParameters, Tensor};
use crate::scalar::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"QFLW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Serialized length for parameter tensors with the given dims.
pub fn wire_len(dims: &[Vec<usize>]) -> usize {
    8 + dims
        .iter()
        .map(|d| 1 + 4 * d.len() + 8 * d.iter().product::<usize>())
        .sum::<usize>()
}

pub fn serialize_weights<T: Scalar>(w: &ModelParameters<T>) -> Result<Vec<u8>> {
    let tensors = w.tensors();
    if tensors.is_empty() {
        return Err(Error::config("cannot serialize an empty parameter list"));
    }
    let count = u16::try_from(tensors.len())
        .map_err(|_| Error::config(format!("{} tensors exceed the u16 count field", tensors.len())))?;
    let mut out = Vec::with_capacity(wire_len(&w.dims()));
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::config(format!("tensor rank {} exceeds 255", t.rank())))?;
        out.push(rank);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::config(format!("dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            actual: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn deserialize_weights<T: Scalar>(bytes: &[u8]) -> Result<ModelParameters<T>> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("missing QFLW magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let count = r.u16()? as usize;
    if count == 0 {
        return Err(Error::Format("weight payload declares zero tensors".into()));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let rank = r.u8()? as usize;
        if rank == 0 {
            return Err(Error::Format(format!("tensor {i} has rank 0")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(Error::Format(format!("tensor {i} has a zero dimension")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {i} size overflows")))?;
        let raw = r.take(n)?;
        let mut values = Vec::with_capacity(n / 8);
        for b in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(Error::Format(format!("tensor {i} contains a non-finite value")));
            }
            values.push(T::from_f64_lossy(v));
        }
        tensors.push(Tensor::new(dims, values)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Length {
            expected: r.pos,
            actual: bytes.len(),
        });
    }
    Ok(ModelParameters::from_tensors(tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Architecture};
    use proptest::prelude::*;

    fn one_2x2() -> ModelParameters<f64> {
        ModelParameters::from_tensors(vec![Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.25]).unwrap()])
    }

    #[test]
    fn single_2x2_tensor_is_49_bytes() {
        // 4 magic + 2 version + 2 count + (1 rank + 2*4 dims) + 4*8 values
        let bytes = serialize_weights(&one_2x2()).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 2 + (1 + 2 * 4) + 4 * 8);
        assert_eq!(bytes.len(), 49);
        assert_eq!(wire_len(&[vec![2, 2]]), 49);
        assert_eq!(&bytes[..8], &[b'Q', b'F', b'L', b'W', 1, 0, 1, 0]);
        assert_eq!(&bytes[8..17], &[2, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[17..25], &1.0f64.to_le_bytes());
    }

    #[test]
    fn empty_list_rejected() {
        assert!(serialize_weights(&ModelParameters::<f64>::from_tensors(vec![])).is_err());
    }

    #[test]
    fn decode_errors() {
        let bytes = serialize_weights(&one_2x2()).unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        assert!(matches!(deserialize_weights::<f64>(&bad), Err(Error::Format(_))));
        assert!(matches!(
            deserialize_weights::<f64>(&bytes[..bytes.len() - 1]),
            Err(Error::Length { .. })
        ));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(deserialize_weights::<f64>(&v), Err(Error::Version { found: 9, expected: 1 })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(deserialize_weights::<f64>(&long), Err(Error::Length { .. })));
    }

    #[test]
    fn length_depends_only_on_architecture() {
        let arch = Architecture::default_cnn();
        let a = serialize_weights(&init_model::<f64>(&arch, 1)).unwrap();
        let b = serialize_weights(&init_model::<f64>(&arch, 2)).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(a.len(), wire_len(&arch.parameter_dims()));
    }

    #[test]
    fn f32_parameters_roundtrip() {
        let arch = Architecture::default_cnn();
        let p = init_model::<f32>(&arch, 3);
        let q: ModelParameters<f32> = deserialize_weights(&serialize_weights(&p).unwrap()).unwrap();
        assert!(p.bitwise_eq(&q));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(
            shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..4),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::seeded(seed);
            let tensors = shapes.into_iter().map(|dims| {
                let n = dims.iter().product();
                let vals = (0..n).map(|_| {
                    let bits = rand::Rng::random::<u64>(&mut rng);
                    let v = f64::from_bits(bits);
                    if v.is_finite() { v } else { 0.0 }
                }).collect();
                Tensor::new(dims, vals).unwrap()
            }).collect();
            let p = ModelParameters::from_tensors(tensors);
            let q: ModelParameters<f64> = deserialize_weights(&serialize_weights(&p).unwrap()).unwrap();
            prop_assert!(p.bitwise_eq(&q));
        }
    }
}
