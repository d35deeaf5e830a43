//! Paillier encryption with `g = n + 1`.
//!
//! Plaintexts live in `Z_n`; signed values are represented modulo `n` and
//! decode as negative when at least `n / 2`. Every ciphertext carries the
//! identifier of the key it was produced under, and mixing keys is an error.

use std::sync::OnceLock;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::integer::Order;
use rug::Integer;
use sha2::{Digest, Sha256};

use super::CryptoError;

pub const PRODUCTION_MODULUS_BITS: u32 = 2048;
pub const TEST_MODULUS_BITS: u32 = 1024;
/// Smallest modulus accepted anywhere, for fast unit tests only.
pub const MIN_MODULUS_BITS: u32 = 128;

const TEST_KEY_SEED: u64 = 0x7e57_ca5e_0000_0001;

pub type KeyId = [u8; 16];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: Integer,
    n_squared: Integer,
    half_n: Integer,
    key_id: KeyId,
}

impl PaillierPublicKey {
    pub fn from_modulus(n: Integer) -> Result<Self, CryptoError> {
        if n.significant_bits() < MIN_MODULUS_BITS || n.is_even() {
            return Err(CryptoError::InvalidKey(format!(
                "modulus must be odd and at least {MIN_MODULUS_BITS} bits"
            )));
        }
        let digest = Sha256::digest(n.to_digits::<u8>(Order::Msf));
        let mut key_id = [0u8; 16];
        key_id.copy_from_slice(&digest[..16]);
        let n_squared = Integer::from(n.square_ref());
        let half_n = Integer::from(&n >> 1);
        Ok(PaillierPublicKey { n, n_squared, half_n, key_id })
    }

    pub fn n(&self) -> &Integer {
        &self.n
    }

    pub fn n_squared(&self) -> &Integer {
        &self.n_squared
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn modulus_bits(&self) -> u32 {
        self.n.significant_bits()
    }

    /// Fixed wire width of a ciphertext.
    pub fn ciphertext_len(&self) -> usize {
        self.n_squared.significant_bits().div_ceil(8) as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.n.to_digits::<u8>(Order::Msf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        Self::from_modulus(Integer::from_digits(bytes, Order::Msf))
    }

    /// Maps a signed plaintext into `Z_n`. Magnitudes must stay below `n / 2`.
    pub fn encode_signed(&self, m: &Integer) -> Result<Integer, CryptoError> {
        if m.as_abs().cmp(&self.half_n).is_ge() {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        let mut r = m.clone();
        if r < 0 {
            r += &self.n;
        }
        Ok(r)
    }

    /// Inverse of [`encode_signed`](Self::encode_signed).
    pub fn decode_signed(&self, m: &Integer) -> Integer {
        if *m >= self.half_n {
            Integer::from(m - &self.n)
        } else {
            m.clone()
        }
    }

    /// Fails with `Overflow` unless `bound < n / 2`.
    pub fn check_headroom(&self, bound: &Integer) -> Result<(), CryptoError> {
        if bound.as_abs().cmp(&self.half_n).is_lt() {
            Ok(())
        } else {
            Err(CryptoError::Overflow)
        }
    }

    /// Public-key encryption: `(1 + m·n) · r^n mod n²`.
    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        m: &Integer,
        rng: &mut R,
    ) -> Result<HeCiphertext, CryptoError> {
        let m = self.encode_signed(m)?;
        let rn = self.random_nth_residue(rng);
        Ok(self.wrap(self.combine(&m, &rn)))
    }

    pub fn encrypt_i64<R: RngCore + CryptoRng>(&self, m: i64, rng: &mut R) -> HeCiphertext {
        self.encrypt(&Integer::from(m), rng)
            .expect("an i64 always fits a modulus of at least 128 bits")
    }

    fn random_nth_residue<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Integer {
        loop {
            let r = random_below(&self.n, rng);
            if r != 0 && Integer::from(r.gcd_ref(&self.n)) == 1 {
                return r.pow_mod(&self.n, &self.n_squared).expect("modulus is positive");
            }
        }
    }

    fn combine(&self, m: &Integer, rn: &Integer) -> Integer {
        let mut c = Integer::from(m * &self.n);
        c += 1;
        c *= rn;
        c %= &self.n_squared;
        c
    }

    fn wrap(&self, c: Integer) -> HeCiphertext {
        HeCiphertext { c, key_id: self.key_id }
    }

    fn check(&self, ct: &HeCiphertext) -> Result<(), CryptoError> {
        if ct.key_id == self.key_id {
            Ok(())
        } else {
            Err(CryptoError::KeyMismatch)
        }
    }

    /// Homomorphic addition of plaintexts.
    pub fn add(&self, a: &HeCiphertext, b: &HeCiphertext) -> Result<HeCiphertext, CryptoError> {
        self.check(a)?;
        self.check(b)?;
        let mut c = Integer::from(&a.c * &b.c);
        c %= &self.n_squared;
        Ok(self.wrap(c))
    }

    /// Adds a known signed plaintext: `ct · (1 + k·n)`.
    pub fn add_plain(&self, ct: &HeCiphertext, k: &Integer) -> Result<HeCiphertext, CryptoError> {
        self.check(ct)?;
        let k = self.encode_signed(k)?;
        Ok(self.wrap(self.combine(&k, &ct.c)))
    }

    /// Adds `r ∈ [0, n)` modulo `n`.
    pub fn add_plain_mod(&self, ct: &HeCiphertext, r: &Integer) -> Result<HeCiphertext, CryptoError> {
        self.check(ct)?;
        if *r < 0 || *r >= self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(self.wrap(self.combine(r, &ct.c)))
    }

    /// Uniform element of `Z_n`.
    pub fn random_plaintext<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Integer {
        random_below(&self.n, rng)
    }

    /// Multiplies the plaintext by a signed scalar: `ct^(k mod n)`.
    pub fn scalar_mul(&self, ct: &HeCiphertext, k: &Integer) -> Result<HeCiphertext, CryptoError> {
        self.check(ct)?;
        let mut e = Integer::from(k % &self.n);
        if e < 0 {
            e += &self.n;
        }
        let c = Integer::from(ct.c.pow_mod_ref(&e, &self.n_squared).expect("modulus is positive"));
        Ok(self.wrap(c))
    }

    /// `Enc(Σᵢ wᵢ·mᵢ)` from `Enc(mᵢ)` and non-negative integer weights,
    /// via bucketed multi-exponentiation.
    pub fn weighted_sum(
        &self,
        cts: &[&HeCiphertext],
        weights: &[u64],
    ) -> Result<HeCiphertext, CryptoError> {
        if cts.len() != weights.len() {
            return Err(CryptoError::Internal(format!(
                "{} ciphertexts but {} weights",
                cts.len(),
                weights.len()
            )));
        }
        for ct in cts {
            self.check(ct)?;
        }
        let bases: Vec<&Integer> = cts.iter().map(|ct| &ct.c).collect();
        Ok(self.wrap(multi_exp(&bases, weights, &self.n_squared)))
    }

    /// Encryption of zero, used to rerandomize.
    pub fn encrypt_zero<R: RngCore + CryptoRng>(&self, rng: &mut R) -> HeCiphertext {
        self.wrap(self.random_nth_residue(rng))
    }

    /// Same plaintext, fresh randomness.
    pub fn refresh<R: RngCore + CryptoRng>(
        &self,
        ct: &HeCiphertext,
        rng: &mut R,
    ) -> Result<HeCiphertext, CryptoError> {
        let zero = self.encrypt_zero(rng);
        self.add(ct, &zero)
    }

    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<HeCiphertext, CryptoError> {
        if bytes.len() != self.ciphertext_len() {
            return Err(CryptoError::InvalidCiphertext(format!(
                "expected {} bytes, got {}",
                self.ciphertext_len(),
                bytes.len()
            )));
        }
        let c = Integer::from_digits(bytes, Order::Msf);
        if c == 0 || c >= self.n_squared {
            return Err(CryptoError::InvalidCiphertext("value outside Z_{n^2}".into()));
        }
        Ok(self.wrap(c))
    }

    pub fn ciphertext_to_bytes(&self, ct: &HeCiphertext) -> Result<Vec<u8>, CryptoError> {
        self.check(ct)?;
        let width = self.ciphertext_len();
        let digits = ct.c.to_digits::<u8>(Order::Msf);
        let mut out = vec![0u8; width - digits.len()];
        out.extend_from_slice(&digits);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeCiphertext {
    c: Integer,
    key_id: KeyId,
}

impl HeCiphertext {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn raw(&self) -> &Integer {
        &self.c
    }
}

/// Factorization of `n` with the CRT constants used by decryption and by
/// fast encryption.
#[derive(Clone)]
pub struct PaillierSecretKey {
    p: Integer,
    q: Integer,
    p_squared: Integer,
    q_squared: Integer,
    p_minus_1: Integer,
    q_minus_1: Integer,
    h_p: Integer,
    h_q: Integer,
    q_inv_mod_p: Integer,
    q_squared_inv_mod_p_squared: Integer,
    key_id: KeyId,
}

impl std::fmt::Debug for PaillierSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PaillierSecretKey(..)")
    }
}

impl PaillierSecretKey {
    fn new(p: Integer, q: Integer, public: &PaillierPublicKey) -> Result<Self, CryptoError> {
        let p_squared = Integer::from(p.square_ref());
        let q_squared = Integer::from(q.square_ref());
        let p_minus_1 = Integer::from(&p - 1);
        let q_minus_1 = Integer::from(&q - 1);
        let g = Integer::from(public.n() + 1);
        let h = |prime: &Integer, prime_sq: &Integer, prime_m1: &Integer| {
            let x = Integer::from(g.pow_mod_ref(prime_m1, prime_sq).expect("positive modulus"));
            let l = Integer::from(x - 1) / prime;
            l.invert(prime).map_err(|_| CryptoError::InvalidKey("degenerate factor".into()))
        };
        let h_p = h(&p, &p_squared, &p_minus_1)?;
        let h_q = h(&q, &q_squared, &q_minus_1)?;
        let q_inv_mod_p = Integer::from(q.invert_ref(&p).ok_or_else(|| CryptoError::InvalidKey("p = q".into()))?);
        let q_squared_inv_mod_p_squared = Integer::from(
            q_squared
                .invert_ref(&p_squared)
                .ok_or_else(|| CryptoError::InvalidKey("p = q".into()))?,
        );
        Ok(PaillierSecretKey {
            p,
            q,
            p_squared,
            q_squared,
            p_minus_1,
            q_minus_1,
            h_p,
            h_q,
            q_inv_mod_p,
            q_squared_inv_mod_p_squared,
            key_id: public.key_id,
        })
    }

    /// Plaintext in `[0, n)`.
    pub fn decrypt(&self, ct: &HeCiphertext) -> Result<Integer, CryptoError> {
        if ct.key_id != self.key_id {
            return Err(CryptoError::KeyMismatch);
        }
        let part = |prime: &Integer, prime_sq: &Integer, prime_m1: &Integer, h: &Integer| {
            let x = Integer::from(ct.c.pow_mod_ref(prime_m1, prime_sq).expect("positive modulus"));
            let mut m = Integer::from(x - 1) / prime;
            m *= h;
            m %= prime;
            m
        };
        let m_p = part(&self.p, &self.p_squared, &self.p_minus_1, &self.h_p);
        let m_q = part(&self.q, &self.q_squared, &self.q_minus_1, &self.h_q);
        Ok(crt(&m_p, &m_q, &self.p, &self.q, &self.q_inv_mod_p))
    }

    /// A uniform n-th residue mod `n²` from two half-size exponentiations:
    /// `y^p mod p²` ranges over the n-th residues mod `p²` as `y` ranges over
    /// `Z_p*`, and likewise for `q`.
    fn random_nth_residue<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Integer {
        let half = |prime: &Integer, prime_sq: &Integer, rng: &mut R| loop {
            let y = random_below(prime, rng);
            if y != 0 {
                return y.pow_mod(prime, prime_sq).expect("positive modulus");
            }
        };
        let rho_p = half(&self.p, &self.p_squared, rng);
        let rho_q = half(&self.q, &self.q_squared, rng);
        crt(&rho_p, &rho_q, &self.p_squared, &self.q_squared, &self.q_squared_inv_mod_p_squared)
    }
}

/// `x ≡ a (mod m1)`, `x ≡ b (mod m2)`, given `m2⁻¹ mod m1`.
fn crt(a: &Integer, b: &Integer, m1: &Integer, m2: &Integer, m2_inv_mod_m1: &Integer) -> Integer {
    let mut t = Integer::from(a - b);
    t *= m2_inv_mod_m1;
    t %= m1;
    if t < 0 {
        t += m1;
    }
    t *= m2;
    t += b;
    t
}

#[derive(Clone, Debug)]
pub struct PaillierKeyPair {
    pub public: PaillierPublicKey,
    pub secret: PaillierSecretKey,
    insecure: bool,
}

impl PaillierKeyPair {
    /// Fresh key with an exactly `bits`-bit modulus `n = p·q` and
    /// `gcd(n, φ(n)) = 1`.
    pub fn generate<R: RngCore + CryptoRng>(bits: u32, rng: &mut R) -> Result<Self, CryptoError> {
        if bits < MIN_MODULUS_BITS || bits % 2 != 0 {
            return Err(CryptoError::InvalidKey(format!(
                "modulus size must be even and at least {MIN_MODULUS_BITS}"
            )));
        }
        loop {
            let p = random_prime(bits / 2, rng);
            let q = random_prime(bits / 2, rng);
            if p == q {
                continue;
            }
            let n = Integer::from(&p * &q);
            if n.significant_bits() != bits {
                continue;
            }
            let phi = Integer::from(&p - 1) * Integer::from(&q - 1);
            if Integer::from(n.gcd_ref(&phi)) != 1 {
                continue;
            }
            let public = PaillierPublicKey::from_modulus(n)?;
            let secret = PaillierSecretKey::new(p, q, &public)?;
            return Ok(PaillierKeyPair { public, secret, insecure: false });
        }
    }

    /// Deterministic 1024-bit key for tests. Never use it for real data.
    pub fn insecure_test_key() -> Self {
        static KEY: OnceLock<PaillierKeyPair> = OnceLock::new();
        KEY.get_or_init(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(TEST_KEY_SEED);
            let mut kp = Self::generate(TEST_MODULUS_BITS, &mut rng).expect("valid size");
            kp.insecure = true;
            kp
        })
        .clone()
    }

    pub fn is_insecure(&self) -> bool {
        self.insecure
    }

    /// Encryption using the factorization; distributed exactly as
    /// [`PaillierPublicKey::encrypt`] but about four times faster.
    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        m: &Integer,
        rng: &mut R,
    ) -> Result<HeCiphertext, CryptoError> {
        let m = self.public.encode_signed(m)?;
        let rn = self.secret.random_nth_residue(rng);
        Ok(self.public.wrap(self.public.combine(&m, &rn)))
    }

    pub fn encrypt_i64<R: RngCore + CryptoRng>(&self, m: i64, rng: &mut R) -> HeCiphertext {
        self.encrypt(&Integer::from(m), rng)
            .expect("an i64 always fits a modulus of at least 128 bits")
    }

    pub fn decrypt(&self, ct: &HeCiphertext) -> Result<Integer, CryptoError> {
        self.secret.decrypt(ct)
    }

    pub fn decrypt_signed(&self, ct: &HeCiphertext) -> Result<Integer, CryptoError> {
        Ok(self.public.decode_signed(&self.secret.decrypt(ct)?))
    }
}

fn random_below<R: RngCore>(bound: &Integer, rng: &mut R) -> Integer {
    let bits = bound.significant_bits();
    let len = bits.div_ceil(8) as usize;
    let excess = (len as u32 * 8) - bits;
    let mut buf = vec![0u8; len];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let x = Integer::from_digits(&buf, Order::Msf);
        if x < *bound {
            return x;
        }
    }
}

/// Prime of exactly `bits` bits with the top two bits set, so the product of
/// two has exactly `2·bits` bits.
fn random_prime<R: RngCore>(bits: u32, rng: &mut R) -> Integer {
    let len = bits.div_ceil(8) as usize;
    let excess = (len as u32 * 8) - bits;
    let mut buf = vec![0u8; len];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let mut x = Integer::from_digits(&buf, Order::Msf);
        x.set_bit(bits - 1, true);
        x.set_bit(bits - 2, true);
        x.next_prime_mut();
        if x.significant_bits() == bits {
            return x;
        }
    }
}

/// `Πᵢ basesᵢ^expsᵢ mod modulus` by Pippenger's bucket method.
pub fn multi_exp(bases: &[&Integer], exps: &[u64], modulus: &Integer) -> Integer {
    debug_assert_eq!(bases.len(), exps.len());
    let max_exp = exps.iter().copied().max().unwrap_or(0);
    if max_exp == 0 {
        return Integer::from(1) % modulus;
    }
    let n = bases.len();
    let window: u32 = if n < 16 { 1 } else { (usize::BITS - n.leading_zeros() - 3).clamp(2, 16) };
    let max_bits = u64::BITS - max_exp.leading_zeros();
    let windows = max_bits.div_ceil(window);
    let mask = (1u64 << window) - 1;

    let mut result: Option<Integer> = None;
    let mut buckets: Vec<Option<Integer>> = vec![None; mask as usize];
    for w in (0..windows).rev() {
        if let Some(r) = result.as_mut() {
            for _ in 0..window {
                r.square_mut();
                *r %= modulus;
            }
        }
        for b in buckets.iter_mut() {
            *b = None;
        }
        let shift = w * window;
        for (base, &e) in bases.iter().zip(exps) {
            let digit = (e >> shift) & mask;
            if digit == 0 {
                continue;
            }
            match &mut buckets[(digit - 1) as usize] {
                Some(acc) => {
                    *acc *= *base;
                    *acc %= modulus;
                }
                slot @ None => *slot = Some((*base).clone()),
            }
        }
        // Σ_d d·bucket_d, multiplicatively, with running suffix products.
        let mut running: Option<Integer> = None;
        let mut window_acc: Option<Integer> = None;
        for bucket in buckets.iter().rev() {
            if let Some(b) = bucket {
                running = Some(match running {
                    Some(mut r) => {
                        r *= b;
                        r %= modulus;
                        r
                    }
                    None => b.clone(),
                });
            }
            if let Some(r) = &running {
                window_acc = Some(match window_acc {
                    Some(mut a) => {
                        a *= r;
                        a %= modulus;
                        a
                    }
                    None => r.clone(),
                });
            }
        }
        if let Some(a) = window_acc {
            result = Some(match result {
                Some(mut r) => {
                    r *= a;
                    r %= modulus;
                    r
                }
                None => a,
            });
        }
    }
    result.unwrap_or_else(|| Integer::from(1) % modulus)
}
