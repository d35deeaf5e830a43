//! P1's policy on what P2 may measure.
//!
//! P2 submits one salted digest per row alongside its encrypted rows. P1
//! rejects datasets smaller than `min_rows`, and datasets whose digest set
//! differs from an earlier accepted one in fewer than `min_rows` rows, which
//! would let P2 difference two measurements down to a handful of members.
//! The digests are keyed by a secret only P2 holds, so P1 cannot test member
//! ids against them.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MIN_ROWS: usize = 1000;

pub type RowDigest = [u8; 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationReason {
    TooFewRows,
    NearDuplicate,
    DigestCountMismatch,
    InvalidPolicy,
}

impl ViolationReason {
    /// Stable machine-readable code.
    pub fn code(self) -> &'static str {
        match self {
            ViolationReason::TooFewRows => "too_few_rows",
            ViolationReason::NearDuplicate => "near_duplicate",
            ViolationReason::DigestCountMismatch => "digest_count_mismatch",
            ViolationReason::InvalidPolicy => "invalid_policy",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        [
            ViolationReason::TooFewRows,
            ViolationReason::NearDuplicate,
            ViolationReason::DigestCountMismatch,
            ViolationReason::InvalidPolicy,
        ]
        .into_iter()
        .find(|r| r.code() == code)
    }
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("governance violation ({reason}): {detail}")]
pub struct GovernanceViolation {
    pub reason: ViolationReason,
    pub detail: String,
}

impl GovernanceViolation {
    fn new(reason: ViolationReason, detail: impl Into<String>) -> Self {
        GovernanceViolation { reason, detail: detail.into() }
    }
}

/// Keyed digest of one P2 row.
pub fn row_digest(key: &[u8; 32], member_id: &str, values: &[f64]) -> RowDigest {
    let mut h = Sha256::new();
    h.update(b"ppre-governance-v1");
    h.update(key);
    h.update((member_id.len() as u32).to_be_bytes());
    h.update(member_id.as_bytes());
    for v in values {
        h.update(v.to_bits().to_be_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone)]
pub struct GovernancePolicy {
    min_rows: usize,
    ledger: Vec<HashSet<RowDigest>>,
    ledger_path: Option<PathBuf>,
}

impl GovernancePolicy {
    pub fn new(min_rows: usize) -> Result<Self, GovernanceViolation> {
        if min_rows < 1 {
            return Err(GovernanceViolation::new(ViolationReason::InvalidPolicy, "min_rows must be at least 1"));
        }
        Ok(GovernancePolicy { min_rows, ledger: Vec::new(), ledger_path: None })
    }

    /// Persists accepted datasets to `path`, loading any already there.
    ///
    /// The file is a sequence of datasets, each a big-endian `u64` digest
    /// count followed by that many 32-byte digests.
    pub fn with_ledger_file(mut self, path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if path.exists() {
            self.ledger = read_ledger(&path)?;
        }
        self.ledger_path = Some(path);
        Ok(self)
    }

    pub fn min_rows(&self) -> usize {
        self.min_rows
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.len()
    }

    pub fn check(&self, digests: &[RowDigest], row_count: usize) -> Result<(), GovernanceViolation> {
        if digests.len() != row_count {
            return Err(GovernanceViolation::new(
                ViolationReason::DigestCountMismatch,
                format!("{} digests for {row_count} rows", digests.len()),
            ));
        }
        if row_count < self.min_rows {
            return Err(GovernanceViolation::new(
                ViolationReason::TooFewRows,
                format!("{row_count} rows, minimum is {}", self.min_rows),
            ));
        }
        let fresh: HashSet<RowDigest> = digests.iter().copied().collect();
        for (i, prior) in self.ledger.iter().enumerate() {
            let d = symmetric_difference_at_least(&fresh, prior, self.min_rows);
            if d < self.min_rows {
                return Err(GovernanceViolation::new(
                    ViolationReason::NearDuplicate,
                    format!("differs from accepted dataset #{i} in only {d} rows"),
                ));
            }
        }
        Ok(())
    }

    /// Adds an accepted dataset to the ledger.
    pub fn record(&mut self, digests: &[RowDigest]) -> io::Result<()> {
        if let Some(path) = &self.ledger_path {
            append_ledger(path, digests)?;
        }
        self.ledger.push(digests.iter().copied().collect());
        Ok(())
    }

    pub fn check_and_record(&mut self, digests: &[RowDigest], row_count: usize) -> Result<(), GovernanceViolation> {
        self.check(digests, row_count)?;
        self.record(digests)
            .map_err(|e| GovernanceViolation::new(ViolationReason::InvalidPolicy, format!("ledger write failed: {e}")))
    }
}

/// `|a Δ b|`, stopping early once it reaches `cap`.
fn symmetric_difference_at_least(a: &HashSet<RowDigest>, b: &HashSet<RowDigest>, cap: usize) -> usize {
    let mut d = 0;
    for x in a {
        if !b.contains(x) {
            d += 1;
            if d >= cap {
                return d;
            }
        }
    }
    for x in b {
        if !a.contains(x) {
            d += 1;
            if d >= cap {
                return d;
            }
        }
    }
    d
}

fn read_ledger(path: &Path) -> io::Result<Vec<HashSet<RowDigest>>> {
    let bytes = fs::read(path)?;
    let corrupt = || io::Error::new(io::ErrorKind::InvalidData, "corrupt governance ledger");
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let head = bytes.get(pos..pos + 8).ok_or_else(corrupt)?;
        let n = u64::from_be_bytes(head.try_into().expect("8 bytes")) as usize;
        pos += 8;
        let body = bytes.get(pos..pos + n.checked_mul(32).ok_or_else(corrupt)?).ok_or_else(corrupt)?;
        out.push(body.chunks_exact(32).map(|c| c.try_into().expect("32 bytes")).collect());
        pos += n * 32;
    }
    Ok(out)
}

fn append_ledger(path: &Path, digests: &[RowDigest]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 + 32 * digests.len());
    buf.extend_from_slice(&(digests.len() as u64).to_be_bytes());
    for d in digests {
        buf.extend_from_slice(d);
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_all()
}
