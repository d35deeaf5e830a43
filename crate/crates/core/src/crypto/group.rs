use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use zeroize::Zeroize;

use super::CryptoError;

/// Rejection-sampling attempts before giving up. Each attempt succeeds with
/// probability about 1/4, so the cap is never reached in practice.
pub const HASH_TO_GROUP_MAX_ATTEMPTS: u32 = 1000;

const HASH_DOMAIN: &[u8] = b"ppre-ro-v1";

/// Per-session random-oracle salt, shared in the clear by both parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SessionSalt(pub [u8; 32]);

impl SessionSalt {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        SessionSalt(bytes)
    }
}

/// A non-identity element of the Ristretto255 group with a canonical
/// 32-byte encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupElement(RistrettoPoint);

impl GroupElement {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let compressed = CompressedRistretto::from_slice(bytes).map_err(|_| CryptoError::InvalidPoint)?;
        let point = compressed.decompress().ok_or(CryptoError::InvalidPoint)?;
        if point == RistrettoPoint::identity() {
            return Err(CryptoError::InvalidPoint);
        }
        Ok(GroupElement(point))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let p = RistrettoPoint::random(rng);
            if p != RistrettoPoint::identity() {
                return GroupElement(p);
            }
        }
    }
}

/// Maps `input` into the group: hash `domain ‖ salt ‖ counter ‖ input` with
/// SHA-256 and accept the first digest that decodes to a non-identity point.
///
/// Bits 0 and 255 are cleared before decoding; every canonical encoding has
/// both clear, so the accepted points stay uniform over the group.
pub fn hash_to_group(salt: &SessionSalt, input: &[u8]) -> Result<GroupElement, CryptoError> {
    if input.is_empty() {
        return Err(CryptoError::EmptyInput);
    }
    let mut prefix = Sha256::new();
    prefix.update(HASH_DOMAIN);
    prefix.update(salt.0);
    for counter in 0..HASH_TO_GROUP_MAX_ATTEMPTS {
        let mut h = prefix.clone();
        h.update(counter.to_be_bytes());
        h.update(input);
        let mut candidate: [u8; 32] = h.finalize().into();
        candidate[0] &= 0xfe;
        candidate[31] &= 0x7f;
        if let Some(point) = CompressedRistretto(candidate).decompress() {
            if point != RistrettoPoint::identity() {
                return Ok(GroupElement(point));
            }
        }
    }
    Err(CryptoError::Internal(format!(
        "hash-to-group exhausted {HASH_TO_GROUP_MAX_ATTEMPTS} attempts"
    )))
}

/// Commutative encryption key: a nonzero scalar modulo the group order.
#[derive(Clone)]
pub struct ComKey {
    scalar: Scalar,
    inverse: Scalar,
}

impl ComKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let s = Scalar::random(rng);
            if s != Scalar::ZERO {
                return Self::from_scalar(s).expect("nonzero");
            }
        }
    }

    pub fn from_scalar(scalar: Scalar) -> Result<Self, CryptoError> {
        if scalar == Scalar::ZERO {
            return Err(CryptoError::InvalidKey("commutative key must be nonzero".into()));
        }
        Ok(ComKey { scalar, inverse: scalar.invert() })
    }

    pub fn from_u64(k: u64) -> Result<Self, CryptoError> {
        Self::from_scalar(Scalar::from(k))
    }

    /// `m · sk`.
    pub fn encrypt(&self, m: &GroupElement) -> GroupElement {
        GroupElement(m.0 * self.scalar)
    }

    /// `ct · sk⁻¹`.
    pub fn decrypt(&self, ct: &GroupElement) -> GroupElement {
        GroupElement(ct.0 * self.inverse)
    }

    /// Decodes wire bytes and encrypts them.
    pub fn encrypt_bytes(&self, bytes: &[u8]) -> Result<GroupElement, CryptoError> {
        Ok(self.encrypt(&GroupElement::from_bytes(bytes)?))
    }
}

impl std::fmt::Debug for ComKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ComKey(..)")
    }
}

impl Drop for ComKey {
    fn drop(&mut self) {
        self.scalar.zeroize();
        self.inverse.zeroize();
    }
}
