//! Weight transport: canonical serialization plus a QKD-keyed XOR stream
//! cipher with an FNV-1a integrity tag.
//!
//! Simulation-grade only. The keystream generator and the tag are not
//! cryptographically secure; they exist to make encrypted transport
//! bit-exact, invertible and tamper-evident inside the simulator.

mod cipher;
mod wire;

pub use cipher::{
    decrypt_bytes, decrypt_weights, decrypt_weights_with, encrypt_bytes, encrypt_weights,
    encrypt_weights_with, keystream, otp_pad, pack_bits, Ciphertext, CipherMode, QkdKey,
    CIPHERTEXT_MAGIC, CIPHERTEXT_VERSION, MIN_KEY_BITS,
};
pub use wire::{deserialize_weights, serialize_weights, wire_len, WEIGHTS_MAGIC, WEIGHTS_VERSION};
