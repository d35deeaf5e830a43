//! Searches bytes for plaintext member data.
//!
//! Needles are each member id, and for each probability vector its wire
//! payload, every coordinate's fixed-point and IEEE-754 encodings (both
//! byte orders) and its shortest decimal text. Coordinates at exactly 0 or
//! 1, and decimals shorter than 8 characters, are skipped: they occur in
//! innocent data too often to mean anything.

use std::fs;
use std::io;
use std::path::Path;

use aho_corasick::AhoCorasick;

use crate::crypto::fixed::encode_probability;
use crate::protocol::wire::encode_race;
use crate::race::ProbVector;

const MIN_DECIMAL_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeedleKind {
    MemberId,
    /// A whole fixed-point race payload.
    RaceVector,
    FixedPoint,
    FloatBits,
    DecimalText,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub source: String,
    pub offset: usize,
    pub kind: NeedleKind,
    /// Index of the member id or vector the needle came from.
    pub origin: usize,
}

#[derive(Default)]
pub struct TaintScannerBuilder {
    needles: Vec<Vec<u8>>,
    meta: Vec<(NeedleKind, usize)>,
    ids: usize,
    vectors: usize,
}

impl TaintScannerBuilder {
    fn push(&mut self, bytes: Vec<u8>, kind: NeedleKind, origin: usize) {
        self.needles.push(bytes);
        self.meta.push((kind, origin));
    }

    pub fn member_id(&mut self, id: &str) -> &mut Self {
        if !id.is_empty() {
            let origin = self.ids;
            self.push(id.as_bytes().to_vec(), NeedleKind::MemberId, origin);
        }
        self.ids += 1;
        self
    }

    pub fn prob_vector(&mut self, p: &ProbVector) -> &mut Self {
        let origin = self.vectors;
        self.push(encode_race(p).to_vec(), NeedleKind::RaceVector, origin);
        for &x in p.as_array() {
            if !(x > 0.0 && x < 1.0) {
                continue;
            }
            if let Ok(q) = encode_probability(x) {
                self.push(q.to_be_bytes().to_vec(), NeedleKind::FixedPoint, origin);
            }
            self.push(x.to_be_bytes().to_vec(), NeedleKind::FloatBits, origin);
            self.push(x.to_le_bytes().to_vec(), NeedleKind::FloatBits, origin);
            let text = x.to_string();
            if text.len() >= MIN_DECIMAL_LEN {
                self.push(text.into_bytes(), NeedleKind::DecimalText, origin);
            }
        }
        self.vectors += 1;
        self
    }

    pub fn build(self) -> TaintScanner {
        let ac = AhoCorasick::new(&self.needles).expect("needle set builds");
        TaintScanner { ac, meta: self.meta }
    }
}

pub struct TaintScanner {
    ac: AhoCorasick,
    meta: Vec<(NeedleKind, usize)>,
}

impl TaintScanner {
    pub fn builder() -> TaintScannerBuilder {
        TaintScannerBuilder::default()
    }

    pub fn needle_count(&self) -> usize {
        self.meta.len()
    }

    /// Every needle occurrence in `bytes`, overlapping matches included.
    pub fn scan(&self, source: &str, bytes: &[u8]) -> Vec<Finding> {
        if self.meta.is_empty() {
            return Vec::new();
        }
        self.ac
            .find_overlapping_iter(bytes)
            .map(|m| {
                let (kind, origin) = self.meta[m.pattern().as_usize()];
                Finding { source: source.to_string(), offset: m.start(), kind, origin }
            })
            .collect()
    }

    /// Scans every regular file under `dir`, recursively.
    pub fn scan_dir(&self, dir: &Path) -> io::Result<Vec<Finding>> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.extend(self.scan(&path.display().to_string(), &fs::read(&path)?));
                }
            }
        }
        Ok(out)
    }
}
