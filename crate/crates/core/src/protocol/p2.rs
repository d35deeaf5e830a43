//! The test client's state machine.

use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use rug::Integer;

use super::governance::{row_digest, RowDigest};
use super::p1::{decode_aggregate, P1EncRow};
use super::wire::{self, AggregateBody, AggregatesMsg, OutputMode, SessionHello};
use super::{expect_phase, names, Phase, ProtocolError, SECURITY_LAMBDA};
use crate::crypto::{fixed_encode, hash_to_group, ComKey, GroupElement, HeCiphertext, PaillierKeyPair, PaillierPublicKey};
use crate::estimators::{AggregateReport, EstimatorError};
use crate::race::K;

/// One member's test values, `arity` of them.
#[derive(Clone, Debug, PartialEq)]
pub struct P2Input {
    pub member_id: String,
    pub values: Vec<f64>,
}

/// `(Com.Enc_sk2(RO(id)), HE.Enc(values))`.
#[derive(Clone, Debug, PartialEq)]
pub struct P2EncRow {
    pub enc_id: GroupElement,
    pub enc_values: Vec<HeCiphertext>,
}

impl P2EncRow {
    pub fn to_record(&self, pk: &PaillierPublicKey) -> Result<Vec<u8>, ProtocolError> {
        let mut tail = Vec::with_capacity(self.enc_values.len() * pk.ciphertext_len());
        for ct in &self.enc_values {
            tail.extend_from_slice(&pk.ciphertext_to_bytes(ct)?);
        }
        Ok(wire::encode_group_row(&self.enc_id, &tail))
    }

    pub fn from_record(rec: &[u8], pk: &PaillierPublicKey, arity: usize) -> Result<Self, ProtocolError> {
        let (enc_id, tail) = wire::split_group_row(names::P2_ENCRYPTED, rec)?;
        let width = pk.ciphertext_len();
        if tail.len() != arity * width {
            return Err(ProtocolError::ArityMismatch { expected: arity, found: tail.len() / width.max(1) });
        }
        let enc_values = tail.chunks_exact(width).map(|c| pk.ciphertext_from_bytes(c)).collect::<Result<_, _>>()?;
        Ok(P2EncRow { enc_id, enc_values })
    }
}

pub struct P2State {
    session_id: String,
    phase: Phase,
    hello: SessionHello,
    sk2: ComKey,
    he: PaillierKeyPair,
    governance_key: [u8; 32],
}

impl std::fmt::Debug for P2State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("P2State")
            .field("session_id", &self.session_id)
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

impl P2State {
    /// Key generation on receipt of P1's hello. `he` is P2's Paillier key;
    /// `governance_key` keys the row digests and should stay fixed across
    /// sessions so repeat measurements are recognisable.
    pub fn new<R: RngCore + CryptoRng>(
        session_id: impl Into<String>,
        hello: SessionHello,
        he: PaillierKeyPair,
        governance_key: [u8; 32],
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        if hello.lambda > SECURITY_LAMBDA {
            return Err(ProtocolError::Unsupported(format!(
                "security parameter {} exceeds the supported {SECURITY_LAMBDA}",
                hello.lambda
            )));
        }
        if he.public.modulus_bits() < hello.min_modulus_bits {
            return Err(ProtocolError::Unsupported(format!(
                "Paillier modulus of {} bits is below the session minimum {}",
                he.public.modulus_bits(),
                hello.min_modulus_bits
            )));
        }
        hello.estimator.protocol_supported()?;
        Ok(P2State {
            session_id: session_id.into(),
            phase: Phase::KeyGen,
            hello,
            sk2: ComKey::generate(rng),
            he,
            governance_key,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn hello(&self) -> &SessionHello {
        &self.hello
    }

    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.he.public
    }

    /// Re-encrypts P1's ids under `sk2` and applies a uniform shuffle.
    pub fn p2_double_encrypt_shuffle<R: RngCore + CryptoRng>(
        &mut self,
        mut rows: Vec<P1EncRow>,
        rng: &mut R,
    ) -> Result<Vec<P1EncRow>, ProtocolError> {
        expect_phase(self.phase, Phase::KeyGen)?;
        self.phase = Phase::Encrypting;
        for row in rows.iter_mut() {
            row.enc_id = self.sk2.encrypt(&row.enc_id);
        }
        rows.shuffle(rng);
        Ok(rows)
    }

    /// Encrypts P2's table and computes the governance digests.
    pub fn p2_encrypt<R: RngCore + CryptoRng>(
        &mut self,
        input: &[P2Input],
        rng: &mut R,
    ) -> Result<(Vec<P2EncRow>, Vec<RowDigest>), ProtocolError> {
        expect_phase(self.phase, Phase::Encrypting)?;
        let arity = self.hello.estimator.arity();
        for (index, row) in input.iter().enumerate() {
            if row.values.len() != arity {
                return Err(ProtocolError::ArityMismatch { expected: arity, found: row.values.len() });
            }
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(EstimatorError::NonFiniteValue { index }.into());
            }
        }
        let mut rows = Vec::with_capacity(input.len());
        let mut digests = Vec::with_capacity(input.len());
        for row in input {
            let point = hash_to_group(&self.hello.salt, row.member_id.as_bytes())?;
            let mut enc_values = Vec::with_capacity(arity);
            for &v in &row.values {
                enc_values.push(self.he.encrypt_i64(fixed_encode(v)?, rng));
            }
            rows.push(P2EncRow { enc_id: self.sk2.encrypt(&point), enc_values });
            digests.push(row_digest(&self.governance_key, &row.member_id, &row.values));
        }
        self.phase = Phase::AwaitingOutput;
        Ok((rows, digests))
    }

    /// Decrypts P1's aggregates. Returns `None` when P1 kept the output.
    pub fn p2_finalize(&mut self, msg: &AggregatesMsg) -> Result<Option<AggregateReport>, ProtocolError> {
        expect_phase(self.phase, Phase::AwaitingOutput)?;
        let spec = self.hello.estimator;
        let report = match (&msg.body, self.hello.output_mode) {
            (AggregateBody::Groups(cts), OutputMode::P2Learns) => {
                let mut groups = [None; K];
                for j in 0..K {
                    if let Some(ct) = &cts[j] {
                        groups[j] = Some(decode_aggregate(&self.he.decrypt_signed(ct)?));
                    }
                }
                Some(AggregateReport::means(&spec, groups, msg.sample_size))
            }
            (AggregateBody::Equity(p), OutputMode::P2Learns) => {
                Some(AggregateReport::equity(&spec, *p, msg.sample_size))
            }
            (AggregateBody::Withheld, OutputMode::Masked) => None,
            _ => return Err(ProtocolError::wire(names::AGGREGATES, "body does not match the output mode")),
        };
        self.phase = Phase::Done;
        Ok(report)
    }

    /// Masked variant: decrypts the masked aggregates for P1. Every value P2
    /// sees is uniform on `Z_n`.
    pub fn p2_decrypt_masked(&mut self, msg: &AggregatesMsg) -> Result<[Option<Integer>; K], ProtocolError> {
        expect_phase(self.phase, Phase::AwaitingOutput)?;
        let cts = match (&msg.body, self.hello.output_mode) {
            (AggregateBody::Groups(cts), OutputMode::Masked) => cts,
            _ => return Err(ProtocolError::wire(names::AGGREGATES, "body does not match the output mode")),
        };
        let mut out: [Option<Integer>; K] = Default::default();
        for j in 0..K {
            if let Some(ct) = &cts[j] {
                out[j] = Some(self.he.decrypt(ct)?);
            }
        }
        self.phase = Phase::Done;
        Ok(out)
    }

    /// Everything P2 retains, serialized, for hygiene scans. Secret keys are
    /// omitted.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.session_id.as_bytes());
        out.extend_from_slice(&self.hello.salt.0);
        out.extend_from_slice(format!("{:?}", self.phase).as_bytes());
        out.extend_from_slice(self.hello.estimator.to_manifest().as_bytes());
        out.extend_from_slice(&self.he.public.to_bytes());
        out
    }
}
