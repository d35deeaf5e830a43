//! Both parties in one process, for tests, oracles and benchmarks. The
//! two-process path lives in [`crate::session`].

use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};

use super::governance::GovernancePolicy;
use super::p1::P1State;
use super::p2::{P2Input, P2State};
use super::wire::OutputMode;
use super::ProtocolError;
use crate::crypto::paillier::{PRODUCTION_MODULUS_BITS, TEST_MODULUS_BITS};
use crate::crypto::{PaillierKeyPair, SessionSalt};
use crate::estimators::{AggregateReport, EstimatorSpec};
use crate::privatizer::DemographicRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KeyMode {
    #[default]
    Production2048,
    /// The fixed, publicly known 1024-bit key. Insecure.
    Test1024,
}

impl KeyMode {
    pub fn modulus_bits(self) -> u32 {
        match self {
            KeyMode::Production2048 => PRODUCTION_MODULUS_BITS,
            KeyMode::Test1024 => TEST_MODULUS_BITS,
        }
    }

    pub fn is_insecure(self) -> bool {
        self == KeyMode::Test1024
    }

    pub fn keypair<R: RngCore + CryptoRng>(self, rng: &mut R) -> Result<PaillierKeyPair, ProtocolError> {
        Ok(match self {
            KeyMode::Production2048 => PaillierKeyPair::generate(PRODUCTION_MODULUS_BITS, rng)?,
            KeyMode::Test1024 => PaillierKeyPair::insecure_test_key(),
        })
    }
}

impl fmt::Display for KeyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyMode::Production2048 => "production-2048",
            KeyMode::Test1024 => "test-1024",
        })
    }
}

impl FromStr for KeyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "production-2048" => Ok(KeyMode::Production2048),
            "test-1024" => Ok(KeyMode::Test1024),
            other => Err(format!("unknown key mode `{other}` (expected production-2048 or test-1024)")),
        }
    }
}

/// Fresh keys for both parties, with P2's public key already handed to P1.
pub fn keygen_session<R: RngCore + CryptoRng>(
    session_id: &str,
    estimator: EstimatorSpec,
    output_mode: OutputMode,
    key_mode: KeyMode,
    rng: &mut R,
) -> Result<(P1State, P2State, SessionSalt), ProtocolError> {
    let mut p1 = P1State::new(session_id, estimator, output_mode, key_mode.modulus_bits(), rng)?;
    let mut governance_key = [0u8; 32];
    rng.fill_bytes(&mut governance_key);
    let he = key_mode.keypair(rng)?;
    let p2 = P2State::new(session_id, p1.hello().clone(), he, governance_key, rng)?;
    p1.set_public_key(p2.public_key().clone())?;
    let salt = p1.salt();
    Ok((p1, p2, salt))
}

/// Result of [`run_in_memory`].
#[derive(Clone, Debug)]
pub struct LocalOutcome {
    /// Held by P2 in the direct variant.
    pub p2_report: Option<AggregateReport>,
    /// Held by P1 in the masked variant.
    pub p1_report: Option<AggregateReport>,
    pub joined_rows: usize,
}

impl LocalOutcome {
    /// Whichever party ended up with the output.
    pub fn report(&self) -> Option<&AggregateReport> {
        self.p2_report.as_ref().or(self.p1_report.as_ref())
    }
}

/// Runs every protocol step for two already keyed parties.
pub fn run_parties<R: RngCore + CryptoRng>(
    p1: &mut P1State,
    p2: &mut P2State,
    policy: &mut GovernancePolicy,
    table: Vec<DemographicRecord>,
    values: &[P2Input],
    rng: &mut R,
) -> Result<LocalOutcome, ProtocolError> {
    let enc1 = p1.p1_encrypt(table, rng)?;
    let shuffled = p2.p2_double_encrypt_shuffle(enc1, rng)?;
    let (enc2, digests) = p2.p2_encrypt(values, rng)?;
    let joined = p1.p1_join(policy, shuffled, enc2, &digests)?;
    let joined_rows = joined.len();
    let msg = p1.p1_compute(&joined, rng)?;
    drop(joined);
    let mut out = LocalOutcome { p2_report: None, p1_report: None, joined_rows };
    match p1.hello().output_mode {
        OutputMode::P2Learns => out.p2_report = p2.p2_finalize(&msg)?,
        OutputMode::Masked => {
            if p1.report().is_some() {
                p2.p2_finalize(&msg)?;
            } else {
                let masked = p2.p2_decrypt_masked(&msg)?;
                p1.p1_unmask(masked)?;
            }
            out.p1_report = p1.report().cloned();
        }
    }
    Ok(out)
}

/// A whole session in memory: key generation through output.
pub fn run_in_memory<R: RngCore + CryptoRng>(
    estimator: EstimatorSpec,
    output_mode: OutputMode,
    key_mode: KeyMode,
    policy: &mut GovernancePolicy,
    table: Vec<DemographicRecord>,
    values: &[P2Input],
    rng: &mut R,
) -> Result<LocalOutcome, ProtocolError> {
    let (mut p1, mut p2, _) = keygen_session("local", estimator, output_mode, key_mode, rng)?;
    run_parties(&mut p1, &mut p2, policy, table, values, rng)
}
