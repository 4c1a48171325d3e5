use serde::{Deserialize, Serialize};

use super::wire::{deserialize_weights, serialize_weights};
use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::rng::mix;
use crate::scalar::Scalar;

/// Shortest key accepted for encryption.
pub const MIN_KEY_BITS: usize = 128;

pub const CIPHERTEXT_MAGIC: &[u8; 4] = b"QFLC";
pub const CIPHERTEXT_VERSION: u16 = 1;
const FRAME_HEADER: usize = 4 + 2 + 8 + 8 + 4;

/// Key material from a QKD session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QkdKey {
    bits: Vec<bool>,
    key_id: u64,
}

impl QkdKey {
    pub fn new(bits: Vec<bool>, key_id: u64) -> Result<Self> {
        if bits.len() < MIN_KEY_BITS {
            return Err(Error::Key(format!(
                "key {key_id} has {} bits, minimum is {MIN_KEY_BITS}",
                bits.len()
            )));
        }
        Ok(Self { bits, key_id })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

/// How key bits become a keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CipherMode {
    /// Key bits seed a SplitMix64 stream of any length.
    #[default]
    Expanded,
    /// Key bits are the pad; the key must cover the whole payload.
    StrictOtp,
}

/// Packs bits LSB-first: bit `i` lands in byte `i / 8` at position `i % 8`.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|byte| byte.iter().enumerate().fold(0u8, |acc, (j, &b)| acc | (u8::from(b) << j)))
        .collect()
}

/// Expands a key into `n_bytes` of keystream.
///
/// Key bits are packed into little-endian 64-bit chunks (zero-padded), then
/// folded as `s = mix(s ^ chunk)` from `s = 0`. Output is successive
/// `s = mix(s)` iterates, 8 little-endian bytes each, truncated to `n_bytes`.
pub fn keystream(key: &QkdKey, n_bytes: usize) -> Vec<u8> {
    let packed = pack_bits(key.bits());
    let mut state = packed.chunks(8).fold(0u64, |s, chunk| {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        mix(s ^ u64::from_le_bytes(buf))
    });
    let mut out = Vec::with_capacity(n_bytes + 8);
    while out.len() < n_bytes {
        state = mix(state);
        out.extend_from_slice(&state.to_le_bytes());
    }
    out.truncate(n_bytes);
    out
}

/// The first `n_bytes` of packed key bits, for one-time-pad use.
pub fn otp_pad(key: &QkdKey, n_bytes: usize) -> Result<Vec<u8>> {
    let needed = n_bytes * 8;
    if key.bits().len() < needed {
        return Err(Error::Key(format!(
            "strict one-time pad needs {needed} key bits, key {} has {}",
            key.key_id(),
            key.bits().len()
        )));
    }
    Ok(pack_bits(&key.bits()[..needed]))
}

fn pad(key: &QkdKey, n_bytes: usize, mode: CipherMode) -> Result<Vec<u8>> {
    match mode {
        CipherMode::Expanded => Ok(keystream(key, n_bytes)),
        CipherMode::StrictOtp => otp_pad(key, n_bytes),
    }
}

/// Encrypted payload with the key it was produced under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub key_id: u64,
    pub payload: Vec<u8>,
    /// FNV-1a-64 of the plaintext.
    pub integrity_tag: u64,
}

impl Ciphertext {
    /// `"QFLC" | version u16 | key_id u64 | tag u64 | len u32 | payload`, little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len = u32::try_from(self.payload.len())
            .map_err(|_| Error::config("ciphertext payload exceeds u32 length field"))?;
        let mut out = Vec::with_capacity(FRAME_HEADER + self.payload.len());
        out.extend_from_slice(CIPHERTEXT_MAGIC);
        out.extend_from_slice(&CIPHERTEXT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.key_id.to_le_bytes());
        out.extend_from_slice(&self.integrity_tag.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CIPHERTEXT_MAGIC {
            return Err(Error::Format("missing QFLC magic".into()));
        }
        if bytes.len() < FRAME_HEADER {
            return Err(Error::Length {
                expected: FRAME_HEADER,
                actual: bytes.len(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CIPHERTEXT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CIPHERTEXT_VERSION,
            });
        }
        let key_id = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
        let integrity_tag = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(bytes[22..26].try_into().expect("4 bytes")) as usize;
        if bytes.len() != FRAME_HEADER + len {
            return Err(Error::Length {
                expected: FRAME_HEADER + len,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            key_id,
            payload: bytes[FRAME_HEADER..].to_vec(),
            integrity_tag,
        })
    }
}

pub fn encrypt_bytes(plaintext: &[u8], key: &QkdKey, mode: CipherMode) -> Result<Ciphertext> {
    let stream = pad(key, plaintext.len(), mode)?;
    Ok(Ciphertext {
        key_id: key.key_id(),
        payload: plaintext.iter().zip(&stream).map(|(p, k)| p ^ k).collect(),
        integrity_tag: fnv1a64(plaintext),
    })
}

/// Recovers the plaintext and checks its tag.
pub fn decrypt_bytes(ct: &Ciphertext, key: &QkdKey, mode: CipherMode) -> Result<Vec<u8>> {
    if ct.key_id != key.key_id() {
        return Err(Error::Key(format!(
            "ciphertext was sealed under key {} but key {} was supplied",
            ct.key_id,
            key.key_id()
        )));
    }
    let stream = pad(key, ct.payload.len(), mode)?;
    let plain: Vec<u8> = ct.payload.iter().zip(&stream).map(|(c, k)| c ^ k).collect();
    let actual = fnv1a64(&plain);
    if actual != ct.integrity_tag {
        return Err(Error::Tamper {
            expected: ct.integrity_tag,
            actual,
        });
    }
    Ok(plain)
}

pub fn encrypt_weights<T: Scalar>(w: &ModelParameters<T>, key: &QkdKey) -> Result<Ciphertext> {
    encrypt_weights_with(w, key, CipherMode::Expanded)
}

pub fn encrypt_weights_with<T: Scalar>(
    w: &ModelParameters<T>,
    key: &QkdKey,
    mode: CipherMode,
) -> Result<Ciphertext> {
    encrypt_bytes(&serialize_weights(w)?, key, mode)
}

pub fn decrypt_weights<T: Scalar>(ct: &Ciphertext, key: &QkdKey) -> Result<ModelParameters<T>> {
    decrypt_weights_with(ct, key, CipherMode::Expanded)
}

pub fn decrypt_weights_with<T: Scalar>(
    ct: &Ciphertext,
    key: &QkdKey,
    mode: CipherMode,
) -> Result<ModelParameters<T>> {
    deserialize_weights(&decrypt_bytes(ct, key, mode)?)
}
