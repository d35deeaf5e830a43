//! Fixed-point encodings.
//!
//! Test values travel under homomorphic encryption at [`VALUE_SCALE`]. Race
//! probabilities go through the symmetric channel at [`PROB_SCALE`], and the
//! per-row weights P1 applies homomorphically use [`WEIGHT_SCALE`], so an
//! aggregate decrypts to `Σ w·v` at scale `VALUE_SCALE · WEIGHT_SCALE`.

use super::CryptoError;

pub const VALUE_SCALE: i64 = 1_000_000;
/// Largest magnitude [`fixed_encode`] accepts.
pub const MAX_ABS_VALUE: f64 = 1e6;
pub const PROB_SCALE: u64 = 1_000_000_000_000_000;
pub const WEIGHT_SCALE: u64 = 1_000_000_000_000_000_000;

/// `round(x · 10^6)`.
pub fn fixed_encode(x: f64) -> Result<i64, CryptoError> {
    if !x.is_finite() || x.abs() > MAX_ABS_VALUE {
        return Err(CryptoError::OutOfRange(x));
    }
    Ok((x * VALUE_SCALE as f64).round() as i64)
}

pub fn fixed_decode(i: i64) -> f64 {
    i as f64 / VALUE_SCALE as f64
}

/// Probability in `[0, 1]` to an integer at [`PROB_SCALE`].
pub fn encode_probability(p: f64) -> Result<u64, CryptoError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CryptoError::OutOfRange(p));
    }
    Ok((p * PROB_SCALE as f64).round() as u64)
}

pub fn decode_probability(i: u64) -> f64 {
    i as f64 / PROB_SCALE as f64
}

/// Weight in `[0, 1]` to an integer at [`WEIGHT_SCALE`].
pub fn encode_weight(w: f64) -> Result<u64, CryptoError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(CryptoError::OutOfRange(w));
    }
    Ok((w * WEIGHT_SCALE as f64).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn known_encodings() {
        assert_eq!(fixed_encode(0.5).unwrap(), 500_000);
        assert_eq!(fixed_encode(0.0).unwrap(), 0);
        assert_eq!(fixed_decode(0), 0.0);
        assert_eq!(fixed_encode(-1.25).unwrap(), -1_250_000);
        assert_eq!(fixed_encode(1e6).unwrap(), 1_000_000_000_000);
        assert!(fixed_encode(1e6 + 1.0).is_err());
        assert!(fixed_encode(f64::NAN).is_err());
        assert_eq!(encode_probability(1.0).unwrap(), PROB_SCALE);
        assert!(encode_probability(1.5).is_err());
        assert_eq!(encode_weight(1.0).unwrap(), WEIGHT_SCALE);
    }

    #[test]
    fn round_trip_error_is_half_an_ulp_of_the_scale() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..100_000 {
            let x: f64 = rng.gen();
            worst = worst.max((fixed_decode(fixed_encode(x).unwrap()) - x).abs());
        }
        assert!(worst <= 5e-7, "{worst}");
    }
}
