//! Record encodings for every protocol message.
//!
//! Each message is a list of records (see the transport envelope).
//!
//! | message | records |
//! |---|---|
//! | `session_hello` | salt (32) · λ (u16) · output mode (u8: 1 P2 learns, 2 masked) · estimator manifest (UTF-8) · minimum modulus bits (u32) |
//! | `he_public_key` | `n`, big-endian |
//! | `p1_encrypted`, `p1_double` | one per row: group element (32) ‖ nonce (12) ‖ AES-GCM ciphertext and tag |
//! | `p2_encrypted` | one per row: group element (32) ‖ arity × fixed-width Paillier ciphertext |
//! | `p2_digest` | one 32-byte row digest per row |
//! | `aggregates` | header: body kind (u8: 0 groups, 1 equity, 2 withheld) ‖ sample size (u64); then six ciphertexts (empty record = absent group) or one `f64` |
//! | `masked_plain` | six big-endian integers mod `n` (empty record = absent group) |
//! | `p1_abort`, `p2_abort` | reason code · detail (UTF-8) |
//!
//! The symmetric plaintext of a race vector is six big-endian `u64` values
//! at scale 10^15.

use rug::integer::Order;
use rug::Integer;
use zeroize::Zeroize;

use super::{names, ProtocolError};
use crate::crypto::fixed::{decode_probability, encode_probability};
use crate::crypto::{GroupElement, HeCiphertext, PaillierPublicKey, SessionSalt, SymCiphertext};
use crate::estimators::EstimatorSpec;
use crate::race::{ProbVector, K};

pub const RACE_PAYLOAD_LEN: usize = 8 * K;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    /// P2 decrypts and learns the aggregates.
    P2Learns,
    /// P1 learns the aggregates; P2 only sees uniformly masked values.
    Masked,
}

impl OutputMode {
    fn byte(self) -> u8 {
        match self {
            OutputMode::P2Learns => 1,
            OutputMode::Masked => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(OutputMode::P2Learns),
            2 => Some(OutputMode::Masked),
            _ => None,
        }
    }
}

impl std::str::FromStr for OutputMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p2-learns" | "p2_learns" | "p2" => Ok(OutputMode::P2Learns),
            "masked" => Ok(OutputMode::Masked),
            other => Err(format!("unknown output mode `{other}` (expected p2-learns or masked)")),
        }
    }
}

impl std::fmt::Display for OutputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputMode::P2Learns => "p2-learns",
            OutputMode::Masked => "masked",
        })
    }
}

/// Parameters P1 announces at the start of a session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionHello {
    pub salt: SessionSalt,
    pub lambda: u16,
    pub output_mode: OutputMode,
    pub estimator: EstimatorSpec,
    pub min_modulus_bits: u32,
}

impl SessionHello {
    pub fn encode(&self) -> Vec<Vec<u8>> {
        vec![
            self.salt.0.to_vec(),
            self.lambda.to_be_bytes().to_vec(),
            vec![self.output_mode.byte()],
            self.estimator.to_manifest().into_bytes(),
            self.min_modulus_bits.to_be_bytes().to_vec(),
        ]
    }

    pub fn decode(records: &[Vec<u8>]) -> Result<Self, ProtocolError> {
        let err = |d: &str| ProtocolError::wire(names::SESSION_HELLO, d);
        if records.len() != 5 {
            return Err(err("expected 5 records"));
        }
        let salt: [u8; 32] = records[0].as_slice().try_into().map_err(|_| err("salt must be 32 bytes"))?;
        let lambda = u16::from_be_bytes(records[1].as_slice().try_into().map_err(|_| err("bad lambda"))?);
        let output_mode = match records[2].as_slice() {
            [b] => OutputMode::from_byte(*b).ok_or_else(|| err("bad output mode"))?,
            _ => return Err(err("bad output mode")),
        };
        let manifest = std::str::from_utf8(&records[3]).map_err(|_| err("manifest is not UTF-8"))?;
        let estimator = EstimatorSpec::from_manifest(manifest)?;
        let min_modulus_bits =
            u32::from_be_bytes(records[4].as_slice().try_into().map_err(|_| err("bad modulus size"))?);
        Ok(SessionHello { salt: SessionSalt(salt), lambda, output_mode, estimator, min_modulus_bits })
    }
}

/// Fixed-point plaintext of a race vector. The caller zeroizes it.
pub fn encode_race(p: &ProbVector) -> [u8; RACE_PAYLOAD_LEN] {
    let mut out = [0u8; RACE_PAYLOAD_LEN];
    for (j, chunk) in out.chunks_exact_mut(8).enumerate() {
        let q = encode_probability(p.as_array()[j]).expect("simplex coordinates lie in [0, 1]");
        chunk.copy_from_slice(&q.to_be_bytes());
    }
    out
}

/// Integer coordinates at scale 10^15.
pub fn decode_race_fixed(bytes: &[u8]) -> Result<[u64; K], ProtocolError> {
    if bytes.len() != RACE_PAYLOAD_LEN {
        return Err(ProtocolError::wire(names::P1_DOUBLE, "race payload has the wrong length"));
    }
    let mut out = [0u64; K];
    for (j, chunk) in bytes.chunks_exact(8).enumerate() {
        out[j] = u64::from_be_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(out)
}

pub fn race_fixed_to_vector(q: &[u64; K]) -> Result<ProbVector, ProtocolError> {
    let mut raw = [0.0; K];
    for j in 0..K {
        raw[j] = decode_probability(q[j]);
    }
    let v = ProbVector::normalized(raw).map_err(|e| ProtocolError::wire(names::P1_DOUBLE, e.to_string()));
    raw.zeroize();
    v
}

pub fn encode_group_row(id: &GroupElement, tail: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + tail.len());
    out.extend_from_slice(&id.to_bytes());
    out.extend_from_slice(tail);
    out
}

pub fn split_group_row<'a>(message: &'static str, rec: &'a [u8]) -> Result<(GroupElement, &'a [u8]), ProtocolError> {
    if rec.len() < 32 {
        return Err(ProtocolError::wire(message, "row shorter than a group element"));
    }
    let id = GroupElement::from_bytes(&rec[..32])?;
    Ok((id, &rec[32..]))
}

pub fn split_sym_row(message: &'static str, rec: &[u8]) -> Result<(GroupElement, SymCiphertext), ProtocolError> {
    let (id, tail) = split_group_row(message, rec)?;
    Ok((id, SymCiphertext::from_bytes(tail)?))
}

pub fn encode_public_key(pk: &PaillierPublicKey) -> Vec<Vec<u8>> {
    vec![pk.to_bytes()]
}

pub fn decode_public_key(records: &[Vec<u8>]) -> Result<PaillierPublicKey, ProtocolError> {
    match records {
        [n] => Ok(PaillierPublicKey::from_bytes(n)?),
        _ => Err(ProtocolError::wire(names::HE_PUBLIC_KEY, "expected one record")),
    }
}

pub fn encode_digests(digests: &[[u8; 32]]) -> Vec<Vec<u8>> {
    digests.iter().map(|d| d.to_vec()).collect()
}

pub fn decode_digests(records: &[Vec<u8>]) -> Result<Vec<[u8; 32]>, ProtocolError> {
    records
        .iter()
        .map(|r| r.as_slice().try_into().map_err(|_| ProtocolError::wire(names::P2_DIGEST, "digest must be 32 bytes")))
        .collect()
}

/// P1's output message.
#[derive(Clone, Debug, PartialEq)]
pub enum AggregateBody {
    Groups([Option<HeCiphertext>; K]),
    Equity(f64),
    /// P1 keeps the output (inclusiveness in the masked variant).
    Withheld,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatesMsg {
    pub sample_size: u64,
    pub body: AggregateBody,
}

impl AggregatesMsg {
    pub fn encode(&self, pk: &PaillierPublicKey) -> Result<Vec<Vec<u8>>, ProtocolError> {
        let mut header = Vec::with_capacity(9);
        match &self.body {
            AggregateBody::Groups(cts) => {
                header.push(0);
                header.extend_from_slice(&self.sample_size.to_be_bytes());
                let mut out = vec![header];
                for ct in cts {
                    out.push(match ct {
                        Some(c) => pk.ciphertext_to_bytes(c)?,
                        None => Vec::new(),
                    });
                }
                Ok(out)
            }
            AggregateBody::Equity(p) => {
                header.push(1);
                header.extend_from_slice(&self.sample_size.to_be_bytes());
                Ok(vec![header, p.to_be_bytes().to_vec()])
            }
            AggregateBody::Withheld => {
                header.push(2);
                header.extend_from_slice(&self.sample_size.to_be_bytes());
                Ok(vec![header])
            }
        }
    }

    pub fn decode(records: &[Vec<u8>], pk: &PaillierPublicKey) -> Result<Self, ProtocolError> {
        let err = |d: &str| ProtocolError::wire(names::AGGREGATES, d);
        let header = records.first().ok_or_else(|| err("missing header"))?;
        if header.len() != 9 {
            return Err(err("bad header"));
        }
        let sample_size = u64::from_be_bytes(header[1..].try_into().expect("8 bytes"));
        let body = match header[0] {
            0 => {
                if records.len() != 1 + K {
                    return Err(err("expected six group records"));
                }
                let mut cts: [Option<HeCiphertext>; K] = Default::default();
                for (j, rec) in records[1..].iter().enumerate() {
                    if !rec.is_empty() {
                        cts[j] = Some(pk.ciphertext_from_bytes(rec)?);
                    }
                }
                AggregateBody::Groups(cts)
            }
            1 => match records {
                [_, p] if p.len() == 8 => AggregateBody::Equity(f64::from_be_bytes(p.as_slice().try_into().expect("8"))),
                _ => return Err(err("bad equity record")),
            },
            2 if records.len() == 1 => AggregateBody::Withheld,
            _ => return Err(err("unknown body kind")),
        };
        Ok(AggregatesMsg { sample_size, body })
    }
}

pub fn encode_masked(values: &[Option<Integer>; K]) -> Vec<Vec<u8>> {
    values
        .iter()
        .map(|v| match v {
            Some(x) => {
                let mut d = x.to_digits::<u8>(Order::Msf);
                if d.is_empty() {
                    d.push(0);
                }
                d
            }
            None => Vec::new(),
        })
        .collect()
}

pub fn decode_masked(records: &[Vec<u8>], pk: &PaillierPublicKey) -> Result<[Option<Integer>; K], ProtocolError> {
    if records.len() != K {
        return Err(ProtocolError::wire(names::MASKED_PLAIN, "expected six records"));
    }
    let mut out: [Option<Integer>; K] = Default::default();
    for (j, r) in records.iter().enumerate() {
        if !r.is_empty() {
            let x = Integer::from_digits(r, Order::Msf);
            if x >= *pk.n() {
                return Err(ProtocolError::wire(names::MASKED_PLAIN, "value outside Z_n"));
            }
            out[j] = Some(x);
        }
    }
    Ok(out)
}

pub fn encode_abort(code: &str, detail: &str) -> Vec<Vec<u8>> {
    vec![code.as_bytes().to_vec(), detail.as_bytes().to_vec()]
}

pub fn decode_abort(records: &[Vec<u8>]) -> (String, String) {
    let text = |i: usize| records.get(i).map(|r| String::from_utf8_lossy(r).into_owned()).unwrap_or_default();
    (text(0), text(1))
}
