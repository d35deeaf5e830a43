//! Cryptographic building blocks for the two-party protocol.
//!
//! * [`group`]: commutative (Pohlig-Hellman style) encryption over the
//!   Ristretto255 prime-order group built on Curve25519, plus a salted
//!   SHA-256 hash-to-group by rejection sampling.
//! * [`paillier`]: additively homomorphic Paillier encryption.
//! * [`sym`]: randomized authenticated symmetric encryption (AES-256-GCM).
//! * [`fixed`]: fixed-point encodings of reals into the integer plaintext spaces.

pub mod fixed;
pub mod group;
pub mod paillier;
pub mod sym;

use thiserror::Error;

pub use fixed::{fixed_decode, fixed_encode};
pub use group::{hash_to_group, ComKey, GroupElement, SessionSalt};
pub use paillier::{HeCiphertext, PaillierKeyPair, PaillierPublicKey, PaillierSecretKey};
pub use sym::{SymCiphertext, SymKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryptoError {
    #[error("bytes do not encode a valid group element")]
    InvalidPoint,
    #[error("hash-to-group input must be non-empty")]
    EmptyInput,
    #[error("internal error: {0}")]
    Internal(String),
    #[error("plaintext is outside the plaintext space")]
    PlaintextOutOfRange,
    #[error("ciphertext was produced under a different key")]
    KeyMismatch,
    #[error("result would exceed the plaintext headroom")]
    Overflow,
    #[error("ciphertext failed authentication")]
    AuthenticationFailure,
    #[error("value {0} is outside the fixed-point range")]
    OutOfRange(f64),
    #[error("malformed ciphertext: {0}")]
    InvalidCiphertext(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
}
