use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use rand::{CryptoRng, RngCore};
use zeroize::Zeroize;

use super::CryptoError;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

const AAD: &[u8] = b"ppre-sym-v1";

/// 256-bit AES-GCM key.
#[derive(Clone)]
pub struct SymKey([u8; 32]);

impl SymKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        SymKey(k)
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.0))
    }

    /// Encrypts under a fresh random nonce.
    pub fn encrypt<R: RngCore + CryptoRng>(&self, plaintext: &[u8], rng: &mut R) -> SymCiphertext {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let body = self
            .cipher()
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: AAD })
            .expect("AES-GCM encryption of an in-memory buffer cannot fail");
        SymCiphertext { nonce, body }
    }

    pub fn decrypt(&self, ct: &SymCiphertext) -> Result<Vec<u8>, CryptoError> {
        self.cipher()
            .decrypt(Nonce::from_slice(&ct.nonce), Payload { msg: &ct.body, aad: AAD })
            .map_err(|_| CryptoError::AuthenticationFailure)
    }
}

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymKey(..)")
    }
}

impl Drop for SymKey {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

/// Nonce plus ciphertext-with-tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymCiphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
}

impl SymCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(CryptoError::InvalidCiphertext(format!(
                "symmetric ciphertext of {} bytes is too short",
                bytes.len()
            )));
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        Ok(SymCiphertext { nonce, body: bytes[NONCE_LEN..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_tamper_detection() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let key = SymKey::generate(&mut rng);
        let ct = key.encrypt(b"race probabilities", &mut rng);
        assert_eq!(key.decrypt(&ct).unwrap(), b"race probabilities");

        let mut tampered = ct.clone();
        tampered.body[0] ^= 1;
        assert_eq!(key.decrypt(&tampered), Err(CryptoError::AuthenticationFailure));

        let empty = key.encrypt(b"", &mut rng);
        assert_eq!(key.decrypt(&empty).unwrap(), Vec::<u8>::new());

        let other = SymKey::generate(&mut rng);
        assert_eq!(other.decrypt(&ct), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn nonces_differ_and_bytes_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let key = SymKey::generate(&mut rng);
        let a = key.encrypt(b"x", &mut rng);
        let b = key.encrypt(b"x", &mut rng);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.body, b.body);
        assert_eq!(SymCiphertext::from_bytes(&a.to_bytes()).unwrap(), a);
        assert!(SymCiphertext::from_bytes(&[0u8; 20]).is_err());
    }
}
