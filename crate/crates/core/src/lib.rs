//! Privacy-preserving race estimation for fairness auditing.
//!
//! A two-party pipeline: one party holds race probabilities for members
//! (built from census surname and geography tables, optionally corrected by
//! self-identified race under local differential privacy), the other holds
//! outcomes. The parties join their tables under commutative encryption and
//! compute disparity aggregates under Paillier encryption, so neither sees
//! the other's per-row data.

pub mod bisg;
pub mod census;
pub mod crypto;
pub mod dataset;
pub mod estimators;
pub mod oracle;
pub mod privatizer;
pub mod protocol;
pub mod race;
pub mod session;
pub mod synth;
pub mod taint;
pub mod transport;

pub use race::{ProbVector, RaceCategory, K};
