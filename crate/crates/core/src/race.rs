//! Race/ethnicity categories and probability vectors over them.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of race/ethnicity categories.
pub const K: usize = 6;

/// Sum tolerance for a vector to count as lying on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// The six combined race/ethnicity categories used by the census tables.
///
/// The ordering is fixed: it is the column order of every table file and of
/// [`ProbVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RaceCategory {
    White = 0,
    Black = 1,
    Hispanic = 2,
    AmericanIndianAlaskaNative = 3,
    AsianPacificIslander = 4,
    OtherMultiracial = 5,
}

impl RaceCategory {
    pub const ALL: [RaceCategory; K] = [
        RaceCategory::White,
        RaceCategory::Black,
        RaceCategory::Hispanic,
        RaceCategory::AmericanIndianAlaskaNative,
        RaceCategory::AsianPacificIslander,
        RaceCategory::OtherMultiracial,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Human-readable label.
    pub fn label(self) -> &'static str {
        match self {
            RaceCategory::White => "White",
            RaceCategory::Black => "Black",
            RaceCategory::Hispanic => "Hispanic/Latino",
            RaceCategory::AmericanIndianAlaskaNative => "AmericanIndian/AlaskaNative",
            RaceCategory::AsianPacificIslander => "Asian/PacificIslander",
            RaceCategory::OtherMultiracial => "Other/Multiracial",
        }
    }

    /// Short machine key, used as the table column suffix (`p_<key>`) and in
    /// report files.
    pub fn key(self) -> &'static str {
        match self {
            RaceCategory::White => "white",
            RaceCategory::Black => "black",
            RaceCategory::Hispanic => "hispanic",
            RaceCategory::AmericanIndianAlaskaNative => "aian",
            RaceCategory::AsianPacificIslander => "api",
            RaceCategory::OtherMultiracial => "other",
        }
    }
}

impl fmt::Display for RaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown race/ethnicity category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for RaceCategory {
    type Err = UnknownCategory;

    /// Accepts either the label or the short key, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        RaceCategory::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(t) || c.key().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProbVectorError {
    #[error("probability {value} at index {index} is not in [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("cannot normalize a vector with total mass {0}")]
    ZeroMass(f64),
}

/// A point on the 6-simplex: `Pr(r | ...)` for every category `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbVector([f64; K]);

impl ProbVector {
    /// Validates that `p` lies on the simplex within [`SIMPLEX_TOLERANCE`].
    pub fn new(p: [f64; K]) -> Result<Self, ProbVectorError> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ProbVectorError::OutOfRange { index, value });
            }
        }
        let sum = neumaier_sum(p.iter().copied());
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ProbVectorError::NotNormalized { sum });
        }
        Ok(ProbVector(p))
    }

    /// Divides non-negative weights by their total.
    pub fn normalized(weights: [f64; K]) -> Result<Self, ProbVectorError> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ProbVectorError::OutOfRange { index, value });
            }
        }
        let total = neumaier_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(ProbVectorError::ZeroMass(total));
        }
        Ok(ProbVector(weights.map(|w| w / total)))
    }

    pub fn uniform() -> Self {
        ProbVector([1.0 / K as f64; K])
    }

    pub fn one_hot(category: RaceCategory) -> Self {
        let mut p = [0.0; K];
        p[category.index()] = 1.0;
        ProbVector(p)
    }

    pub fn as_array(&self) -> &[f64; K] {
        &self.0
    }

    pub fn get(&self, category: RaceCategory) -> f64 {
        self.0[category.index()]
    }

    pub fn argmax(&self) -> RaceCategory {
        let mut best = 0;
        for i in 1..K {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        RaceCategory::ALL[best]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        neumaier_sum(self.0.iter().copied())
    }

    pub(crate) fn from_raw_unchecked(p: [f64; K]) -> Self {
        ProbVector(p)
    }
}

/// Overwrites the coordinates with zeros. The result is off the simplex and
/// must not be used further.
impl zeroize::Zeroize for ProbVector {
    fn zeroize(&mut self) {
        self.0.zeroize();
    }
}

impl From<ProbVector> for [f64; K] {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}
