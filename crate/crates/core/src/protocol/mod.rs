//! The two party state machines.
//!
//! P1 (the tester) holds the privatized demographic table; P2 (the test
//! client) holds per-member test values and the homomorphic key pair. The
//! flow is:
//!
//! 1. P1 picks the session salt and keys, encrypts its ids under `sk1` and
//!    its race vectors under the symmetric key, then erases the table.
//! 2. P2 re-encrypts those ids under `sk2` and shuffles the rows.
//! 3. P2 encrypts its own ids under `sk2` and its values under Paillier.
//! 4. P1 re-encrypts P2's ids under `sk1`, joins on the doubly encrypted
//!    ids and drops them, then computes one encrypted aggregate per group.
//! 5. P2 decrypts the aggregates, or in the masked variant decrypts masked
//!    aggregates and P1 removes the masks.
//!
//! Both parties are semi-honest. [`governance`] enforces P1's minimum-size
//! and repeat-measurement policy on P2's dataset.

pub mod governance;
pub mod local;
pub mod p1;
pub mod p2;
pub mod wire;

use std::fmt;

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::estimators::EstimatorError;

pub use governance::{GovernancePolicy, GovernanceViolation, ViolationReason};
pub use local::{keygen_session, run_in_memory, KeyMode, LocalOutcome};
pub use p1::{ErasureReport, JoinedRow, P1EncRow, P1State};
pub use p2::{P2EncRow, P2Input, P2State};
pub use wire::{OutputMode, SessionHello};

/// Security parameter the primitives are instantiated for.
pub const SECURITY_LAMBDA: u16 = 128;

/// Message names on the channel.
pub mod names {
    pub const SESSION_HELLO: &str = "session_hello";
    pub const HE_PUBLIC_KEY: &str = "he_public_key";
    pub const P1_ENCRYPTED: &str = "p1_encrypted";
    pub const P1_DOUBLE: &str = "p1_double";
    pub const P2_ENCRYPTED: &str = "p2_encrypted";
    pub const P2_DIGEST: &str = "p2_digest";
    pub const AGGREGATES: &str = "aggregates";
    pub const MASKED_PLAIN: &str = "masked_plain";
    pub const P1_ABORT: &str = "p1_abort";
    pub const P2_ABORT: &str = "p2_abort";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    KeyGen,
    Encrypting,
    AwaitingDouble,
    Joining,
    Computing,
    AwaitingOutput,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("operation needs phase {expected}, party is in {found}")]
    Phase { expected: Phase, found: Phase },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Governance(#[from] GovernanceViolation),
    #[error("doubly encrypted id occurs more than once")]
    DuplicateJoinKey,
    #[error("the join is empty")]
    EmptyJoin,
    #[error("row carries {found} values, estimator needs {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("malformed message `{message}`: {detail}")]
    Wire { message: &'static str, detail: String },
    #[error("peer aborted ({code}): {detail}")]
    PeerAborted { code: String, detail: String },
    #[error("unsupported session parameter: {0}")]
    Unsupported(String),
}

impl ProtocolError {
    pub(crate) fn wire(message: &'static str, detail: impl Into<String>) -> Self {
        ProtocolError::Wire { message, detail: detail.into() }
    }
}

impl ProtocolError {
    /// Stable code sent to the peer when this error aborts a session.
    pub fn abort_code(&self) -> String {
        match self {
            ProtocolError::Phase { .. } => "phase".into(),
            ProtocolError::Crypto(_) => "crypto".into(),
            ProtocolError::Governance(v) => format!("governance.{}", v.reason.code()),
            ProtocolError::DuplicateJoinKey => "duplicate_join_key".into(),
            ProtocolError::EmptyJoin => "empty_join".into(),
            ProtocolError::ArityMismatch { .. } => "arity_mismatch".into(),
            ProtocolError::Estimator(_) => "estimator".into(),
            ProtocolError::Wire { .. } => "wire".into(),
            ProtocolError::PeerAborted { code, .. } => code.clone(),
            ProtocolError::Unsupported(_) => "unsupported".into(),
        }
    }
}

pub(crate) fn expect_phase(found: Phase, expected: Phase) -> Result<(), ProtocolError> {
    if found == expected {
        Ok(())
    } else {
        Err(ProtocolError::Phase { expected, found })
    }
}
