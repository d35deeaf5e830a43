//! The tester's state machine.

use std::collections::HashMap;

use rand::{CryptoRng, RngCore};
use rug::Integer;
use zeroize::Zeroize;

use super::governance::{GovernancePolicy, RowDigest};
use super::wire::{self, AggregateBody, AggregatesMsg, OutputMode, SessionHello};
use super::{expect_phase, names, P2EncRow, Phase, ProtocolError, SECURITY_LAMBDA};
use crate::crypto::fixed::{MAX_ABS_VALUE, VALUE_SCALE, WEIGHT_SCALE};
use crate::crypto::{hash_to_group, ComKey, GroupElement, PaillierPublicKey, SessionSalt, SymCiphertext, SymKey};
use crate::estimators::{prob_count_equity, AggregateReport, EstimatorKind, EstimatorSpec};
use crate::privatizer::DemographicRecord;
use crate::race::{ProbVector, K};

/// `(Com.Enc_sk1(RO(id)), Sym.Enc(race_p))`, later re-encrypted under sk2.
#[derive(Clone, Debug, PartialEq)]
pub struct P1EncRow {
    pub enc_id: GroupElement,
    pub enc_race: SymCiphertext,
}

impl P1EncRow {
    pub fn to_record(&self) -> Vec<u8> {
        wire::encode_group_row(&self.enc_id, &self.enc_race.to_bytes())
    }

    pub fn from_record(message: &'static str, rec: &[u8]) -> Result<Self, ProtocolError> {
        let (enc_id, enc_race) = wire::split_sym_row(message, rec)?;
        Ok(P1EncRow { enc_id, enc_race })
    }
}

/// A matched row. It carries no identifier of any kind.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinedRow {
    pub enc_race: SymCiphertext,
    pub enc_values: Vec<crate::crypto::HeCiphertext>,
}

/// What P1 has overwritten so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErasureReport {
    pub plaintext_rows_erased: usize,
    pub plaintext_table_erased: bool,
    pub join_keys_erased: usize,
    pub join_index_erased: bool,
}

pub struct P1State {
    session_id: String,
    phase: Phase,
    hello: SessionHello,
    sk1: ComKey,
    sym: SymKey,
    he_pk: Option<PaillierPublicKey>,
    masks: Option<[Option<Integer>; K]>,
    sample_size: u64,
    report: Option<AggregateReport>,
    erasure: ErasureReport,
}

impl std::fmt::Debug for P1State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("P1State")
            .field("session_id", &self.session_id)
            .field("phase", &self.phase)
            .field("erasure", &self.erasure)
            .finish_non_exhaustive()
    }
}

impl P1State {
    /// Key generation: a fresh salt, `sk1` and symmetric key.
    pub fn new<R: RngCore + CryptoRng>(
        session_id: impl Into<String>,
        estimator: EstimatorSpec,
        output_mode: OutputMode,
        min_modulus_bits: u32,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        estimator.validate()?;
        estimator.protocol_supported()?;
        let hello = SessionHello {
            salt: SessionSalt::generate(rng),
            lambda: SECURITY_LAMBDA,
            output_mode,
            estimator,
            min_modulus_bits,
        };
        Ok(P1State {
            session_id: session_id.into(),
            phase: Phase::KeyGen,
            hello,
            sk1: ComKey::generate(rng),
            sym: SymKey::generate(rng),
            he_pk: None,
            masks: None,
            sample_size: 0,
            report: None,
            erasure: ErasureReport::default(),
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

    pub fn salt(&self) -> SessionSalt {
        self.hello.salt
    }

    pub fn erasure(&self) -> ErasureReport {
        self.erasure
    }

    /// Output held by P1: the unmasked means, or a directly computed
    /// inclusiveness probability in the masked variant.
    pub fn report(&self) -> Option<&AggregateReport> {
        self.report.as_ref()
    }

    pub fn set_public_key(&mut self, pk: PaillierPublicKey) -> Result<(), ProtocolError> {
        if pk.modulus_bits() < self.hello.min_modulus_bits {
            return Err(ProtocolError::Unsupported(format!(
                "P2 offered a {}-bit modulus, session requires {}",
                pk.modulus_bits(),
                self.hello.min_modulus_bits
            )));
        }
        self.he_pk = Some(pk);
        Ok(())
    }

    /// Encrypts the table and erases the plaintext.
    pub fn p1_encrypt<R: RngCore + CryptoRng>(
        &mut self,
        mut table: Vec<DemographicRecord>,
        rng: &mut R,
    ) -> Result<Vec<P1EncRow>, ProtocolError> {
        expect_phase(self.phase, Phase::KeyGen)?;
        self.phase = Phase::Encrypting;
        let mut out = Vec::with_capacity(table.len());
        let result = (|| {
            for rec in &table {
                let point = hash_to_group(&self.hello.salt, rec.member_id.as_bytes())?;
                let mut payload = wire::encode_race(&rec.race_p);
                let enc_race = self.sym.encrypt(&payload, rng);
                payload.zeroize();
                out.push(P1EncRow { enc_id: self.sk1.encrypt(&point), enc_race });
            }
            Ok::<_, ProtocolError>(())
        })();
        for rec in table.iter_mut() {
            rec.member_id.zeroize();
            rec.race_p.zeroize();
        }
        self.erasure.plaintext_rows_erased = table.len();
        self.erasure.plaintext_table_erased = true;
        drop(table);
        result?;
        self.phase = Phase::AwaitingDouble;
        Ok(out)
    }

    /// Governance check, then the join on doubly encrypted ids. The ids are
    /// erased before returning.
    pub fn p1_join(
        &mut self,
        policy: &mut GovernancePolicy,
        shuffled: Vec<P1EncRow>,
        p2_rows: Vec<P2EncRow>,
        digests: &[RowDigest],
    ) -> Result<Vec<JoinedRow>, ProtocolError> {
        expect_phase(self.phase, Phase::AwaitingDouble)?;
        policy.check_and_record(digests, p2_rows.len())?;
        let arity = self.hello.estimator.arity();
        if let Some(bad) = p2_rows.iter().find(|r| r.enc_values.len() != arity) {
            return Err(ProtocolError::ArityMismatch { expected: arity, found: bad.enc_values.len() });
        }
        self.phase = Phase::Joining;

        let mut index: HashMap<[u8; 32], usize> = HashMap::with_capacity(shuffled.len());
        let mut races: Vec<Option<SymCiphertext>> = Vec::with_capacity(shuffled.len());
        let mut duplicate = false;
        for (i, row) in shuffled.into_iter().enumerate() {
            if index.insert(row.enc_id.to_bytes(), i).is_some() {
                duplicate = true;
            }
            races.push(Some(row.enc_race));
        }

        let mut joined = Vec::new();
        let mut p2_keys: Vec<[u8; 32]> = Vec::with_capacity(p2_rows.len());
        for row in p2_rows {
            let key = self.sk1.encrypt(&row.enc_id).to_bytes();
            p2_keys.push(key);
            if let Some(&i) = index.get(&key) {
                match races[i].take() {
                    Some(enc_race) => joined.push(JoinedRow { enc_race, enc_values: row.enc_values }),
                    None => duplicate = true,
                }
            }
        }
        if !duplicate {
            p2_keys.sort_unstable();
            duplicate = p2_keys.windows(2).any(|w| w[0] == w[1]);
        }

        let mut erased = 0;
        for (mut k, _) in index.drain() {
            k.zeroize();
            erased += 1;
        }
        for k in p2_keys.iter_mut() {
            k.zeroize();
            erased += 1;
        }
        self.erasure.join_keys_erased = erased;
        self.erasure.join_index_erased = index.is_empty();

        if duplicate {
            return Err(ProtocolError::DuplicateJoinKey);
        }
        self.phase = Phase::Computing;
        Ok(joined)
    }

    /// Symmetric decryption of one joined row's race vector.
    pub fn open_race(&self, row: &JoinedRow) -> Result<ProbVector, ProtocolError> {
        let mut q = self.open_race_fixed(row)?;
        let v = wire::race_fixed_to_vector(&q);
        q.zeroize();
        v
    }

    fn open_race_fixed(&self, row: &JoinedRow) -> Result<[u64; K], ProtocolError> {
        let mut plain = self.sym.decrypt(&row.enc_race)?;
        let q = wire::decode_race_fixed(&plain);
        plain.zeroize();
        q
    }

    /// Encrypted per-group aggregates `Σ_i w_ij · v_i` with
    /// `w_ij = Pr(R_i=j) / Σ_i Pr(R_i=j)`, refreshed, and masked in the
    /// masked variant. Inclusiveness is computed here in the clear.
    pub fn p1_compute<R: RngCore + CryptoRng>(
        &mut self,
        joined: &[JoinedRow],
        rng: &mut R,
    ) -> Result<AggregatesMsg, ProtocolError> {
        expect_phase(self.phase, Phase::Computing)?;
        if joined.is_empty() {
            return Err(ProtocolError::EmptyJoin);
        }
        let spec = self.hello.estimator;
        self.sample_size = joined.len() as u64;

        if spec.kind == EstimatorKind::ProbCount {
            let mut probs = Vec::with_capacity(joined.len());
            for row in joined {
                probs.push(self.open_race(row)?.get(spec.target_group));
            }
            let p = prob_count_equity(&probs, spec.count_threshold)?;
            probs.zeroize();
            self.phase = Phase::Done;
            return Ok(match self.hello.output_mode {
                OutputMode::P2Learns => {
                    AggregatesMsg { sample_size: self.sample_size, body: AggregateBody::Equity(p) }
                }
                OutputMode::Masked => {
                    self.report = Some(AggregateReport::equity(&spec, p, self.sample_size));
                    AggregatesMsg { sample_size: self.sample_size, body: AggregateBody::Withheld }
                }
            });
        }

        let pk = self.he_pk.clone().ok_or_else(|| ProtocolError::Unsupported("no public key received".into()))?;
        let mut fixed: Vec<[u64; K]> = Vec::with_capacity(joined.len());
        for row in joined {
            fixed.push(self.open_race_fixed(row)?);
        }
        let values: Vec<&crate::crypto::HeCiphertext> = joined.iter().map(|r| &r.enc_values[0]).collect();

        let mut aggregates: [Option<crate::crypto::HeCiphertext>; K] = Default::default();
        let mut masks: [Option<Integer>; K] = Default::default();
        for j in 0..K {
            let mass: u128 = fixed.iter().map(|q| q[j] as u128).sum();
            if mass == 0 {
                continue;
            }
            let weights: Vec<u64> = fixed
                .iter()
                .map(|q| ((q[j] as u128 * WEIGHT_SCALE as u128 + mass / 2) / mass) as u64)
                .collect();
            let weight_sum: u128 = weights.iter().map(|&w| w as u128).sum();
            let max_value = (MAX_ABS_VALUE as u128) * VALUE_SCALE as u128;
            pk.check_headroom(&(Integer::from(weight_sum) * Integer::from(max_value)))?;
            let sum = pk.weighted_sum(&values, &weights)?;
            let mut ct = pk.refresh(&sum, rng)?;
            if self.hello.output_mode == OutputMode::Masked {
                let r = pk.random_plaintext(rng);
                ct = pk.add_plain_mod(&ct, &r)?;
                masks[j] = Some(r);
            }
            aggregates[j] = Some(ct);
        }
        for q in fixed.iter_mut() {
            q.zeroize();
        }
        self.phase = match self.hello.output_mode {
            OutputMode::P2Learns => Phase::Done,
            OutputMode::Masked => {
                self.masks = Some(masks);
                Phase::AwaitingOutput
            }
        };
        Ok(AggregatesMsg { sample_size: self.sample_size, body: AggregateBody::Groups(aggregates) })
    }

    /// Removes the masks from P2's decryptions.
    pub fn p1_unmask(&mut self, masked: [Option<Integer>; K]) -> Result<AggregateReport, ProtocolError> {
        expect_phase(self.phase, Phase::AwaitingOutput)?;
        let pk = self.he_pk.as_ref().ok_or_else(|| ProtocolError::Unsupported("no public key received".into()))?;
        let masks = self.masks.take().ok_or_else(|| ProtocolError::wire(names::MASKED_PLAIN, "no masks held"))?;
        let mut groups = [None; K];
        for j in 0..K {
            match (&masked[j], &masks[j]) {
                (Some(m), Some(r)) => {
                    let mut x = Integer::from(m - r);
                    if x < 0 {
                        x += pk.n();
                    }
                    groups[j] = Some(decode_aggregate(&pk.decode_signed(&x)));
                }
                (None, None) => {}
                _ => return Err(ProtocolError::wire(names::MASKED_PLAIN, "group presence does not match")),
            }
        }
        let report = AggregateReport::means(&self.hello.estimator, groups, self.sample_size);
        self.report = Some(report.clone());
        self.phase = Phase::Done;
        Ok(report)
    }

    /// Everything P1 retains, serialized, for hygiene scans. Secret keys are
    /// omitted.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.session_id.as_bytes());
        out.extend_from_slice(&self.hello.salt.0);
        out.extend_from_slice(format!("{:?}", self.phase).as_bytes());
        out.extend_from_slice(self.hello.estimator.to_manifest().as_bytes());
        if let Some(pk) = &self.he_pk {
            out.extend_from_slice(&pk.to_bytes());
        }
        if let Some(masks) = &self.masks {
            for m in masks.iter().flatten() {
                out.extend_from_slice(&m.to_digits::<u8>(rug::integer::Order::Msf));
            }
        }
        out.extend_from_slice(&self.sample_size.to_be_bytes());
        out
    }
}

/// Fixed-point aggregate at scale `VALUE_SCALE · WEIGHT_SCALE` to a real.
pub fn decode_aggregate(x: &Integer) -> f64 {
    let scale = Integer::from(VALUE_SCALE) * Integer::from(WEIGHT_SCALE);
    let (q, r) = x.clone().div_rem_floor(scale.clone());
    q.to_f64() + r.to_f64() / scale.to_f64()
}
