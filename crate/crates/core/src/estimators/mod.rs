//! Group-wise disparity estimators.
//!
//! The hard false-positive-rate estimator uses observed labels. Its soft
//! generalizations weight each row by `Pr(R_i = j)`, and the inclusiveness
//! estimator evaluates a Poisson-binomial tail. Groups with no membership
//! mass are reported as `None` rather than NaN.

mod report;

pub use report::{AggregateReport, ReportError};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::race::{neumaier_sum, ProbVector, RaceCategory, K};

/// Default largest pool `poibin_pmf` accepts.
pub const POIBIN_CAP: usize = 100_000;

pub type GroupValues = [Option<f64>; K];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("probability at index {index} is {value}, outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("value at index {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("pool of {n} exceeds the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("count threshold must be at least 1")]
    InvalidThreshold,
    #[error("certainty level {0} must lie in (0, 1)")]
    InvalidCertainty(f64),
    #[error("{0} cannot be evaluated under encryption")]
    Unsupported(EstimatorKind),
    #[error("invalid estimator manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    HardFpr,
    ModelPerf,
    OutputMetric,
    ProbCount,
}

impl EstimatorKind {
    pub fn key(self) -> &'static str {
        match self {
            EstimatorKind::HardFpr => "hard_fpr",
            EstimatorKind::ModelPerf => "model_perf",
            EstimatorKind::OutputMetric => "output_metric",
            EstimatorKind::ProbCount => "prob_count",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for EstimatorKind {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "hard_fpr" => Ok(EstimatorKind::HardFpr),
            "model_perf" => Ok(EstimatorKind::ModelPerf),
            "output_metric" => Ok(EstimatorKind::OutputMetric),
            "prob_count" => Ok(EstimatorKind::ProbCount),
            other => Err(EstimatorError::Manifest(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Per-row performance metric `f(Y, Ŷ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricDescriptor {
    /// `𝟙(Ŷ = 1, Y = 0)`.
    FalsePositive,
    /// `𝟙(Ŷ = 0, Y = 1)`.
    FalseNegative,
    /// `𝟙(Ŷ = Y)` on rounded labels.
    Accuracy,
    SquaredError,
    AbsoluteError,
}

impl MetricDescriptor {
    pub fn apply(self, y: f64, y_hat: f64) -> f64 {
        let pos = |v: f64| v >= 0.5;
        match self {
            MetricDescriptor::FalsePositive => (pos(y_hat) && !pos(y)) as u8 as f64,
            MetricDescriptor::FalseNegative => (!pos(y_hat) && pos(y)) as u8 as f64,
            MetricDescriptor::Accuracy => (pos(y_hat) == pos(y)) as u8 as f64,
            MetricDescriptor::SquaredError => (y - y_hat) * (y - y_hat),
            MetricDescriptor::AbsoluteError => (y - y_hat).abs(),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            MetricDescriptor::FalsePositive => "false_positive",
            MetricDescriptor::FalseNegative => "false_negative",
            MetricDescriptor::Accuracy => "accuracy",
            MetricDescriptor::SquaredError => "squared_error",
            MetricDescriptor::AbsoluteError => "absolute_error",
        }
    }
}

impl fmt::Display for MetricDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for MetricDescriptor {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "false_positive" | "fp" => Ok(MetricDescriptor::FalsePositive),
            "false_negative" | "fn" => Ok(MetricDescriptor::FalseNegative),
            "accuracy" => Ok(MetricDescriptor::Accuracy),
            "squared_error" => Ok(MetricDescriptor::SquaredError),
            "absolute_error" => Ok(MetricDescriptor::AbsoluteError),
            other => Err(EstimatorError::Manifest(format!("unknown metric `{other}`"))),
        }
    }
}

/// What to compute and how to read the result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Used by `ModelPerf` and `HardFpr`.
    pub metric: MetricDescriptor,
    /// Group of interest for `ProbCount`.
    pub target_group: RaceCategory,
    /// Inclusiveness count threshold for `ProbCount`; distinct from the
    /// clipping threshold.
    pub count_threshold: u32,
    pub certainty: f64,
}

impl EstimatorSpec {
    pub fn hard_fpr() -> Self {
        Self::base(EstimatorKind::HardFpr)
    }

    pub fn model_perf(metric: MetricDescriptor) -> Self {
        EstimatorSpec { metric, ..Self::base(EstimatorKind::ModelPerf) }
    }

    pub fn output_metric() -> Self {
        Self::base(EstimatorKind::OutputMetric)
    }

    pub fn prob_count(
        target_group: RaceCategory,
        count_threshold: u32,
        certainty: f64,
    ) -> Result<Self, EstimatorError> {
        let spec = EstimatorSpec {
            target_group,
            count_threshold,
            certainty,
            ..Self::base(EstimatorKind::ProbCount)
        };
        spec.validate()?;
        Ok(spec)
    }

    fn base(kind: EstimatorKind) -> Self {
        EstimatorSpec {
            kind,
            metric: MetricDescriptor::FalsePositive,
            target_group: RaceCategory::White,
            count_threshold: 1,
            certainty: 0.9,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.count_threshold < 1 {
            return Err(EstimatorError::InvalidThreshold);
        }
        if !(self.certainty > 0.0 && self.certainty < 1.0) {
            return Err(EstimatorError::InvalidCertainty(self.certainty));
        }
        Ok(())
    }

    /// Number of encrypted values P2 contributes per row.
    pub fn arity(&self) -> usize {
        match self.kind {
            EstimatorKind::ProbCount => 0,
            _ => 1,
        }
    }

    /// Whether the protocol can evaluate this estimator (linear in P2 values
    /// or needing none).
    pub fn protocol_supported(&self) -> Result<(), EstimatorError> {
        match self.kind {
            EstimatorKind::HardFpr => Err(EstimatorError::Unsupported(self.kind)),
            _ => Ok(()),
        }
    }

    /// The scalar P2 encrypts for one member.
    pub fn row_value(&self, y: f64, y_hat: f64) -> f64 {
        match self.kind {
            EstimatorKind::OutputMetric => y,
            _ => self.metric.apply(y, y_hat),
        }
    }

    /// `key=value` lines, one field per line.
    pub fn to_manifest(&self) -> String {
        format!(
            "estimator={}\nmetric={}\narity={}\ntarget_group={}\ncount_threshold={}\ncertainty={}\ngroups={}\n",
            self.kind,
            self.metric,
            self.arity(),
            self.target_group.key(),
            self.count_threshold,
            self.certainty,
            RaceCategory::ALL.iter().map(|c| c.key()).collect::<Vec<_>>().join(","),
        )
    }

    pub fn from_manifest(text: &str) -> Result<Self, EstimatorError> {
        let bad = |m: String| EstimatorError::Manifest(m);
        let mut spec = Self::base(EstimatorKind::OutputMetric);
        let mut seen_kind = false;
        let mut arity = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("no `=` in `{line}`")))?;
            let v = v.trim();
            match k.trim() {
                "estimator" => {
                    spec.kind = v.parse()?;
                    seen_kind = true;
                }
                "metric" => spec.metric = v.parse()?,
                "arity" => arity = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "target_group" => {
                    spec.target_group = v.parse().map_err(|_| bad(format!("unknown group `{v}`")))?
                }
                "count_threshold" => {
                    spec.count_threshold = v.parse().map_err(|_| bad(format!("bad threshold `{v}`")))?
                }
                "certainty" => spec.certainty = v.parse().map_err(|_| bad(format!("bad certainty `{v}`")))?,
                "groups" => {
                    let expected: Vec<&str> = RaceCategory::ALL.iter().map(|c| c.key()).collect();
                    if v.split(',').map(str::trim).collect::<Vec<_>>() != expected {
                        return Err(bad(format!("unexpected group labels `{v}`")));
                    }
                }
                other => return Err(bad(format!("unknown field `{other}`"))),
            }
        }
        if !seen_kind {
            return Err(bad("missing `estimator`".into()));
        }
        if let Some(a) = arity {
            if a != spec.arity() {
                return Err(bad(format!("arity {a} does not match {}", spec.kind)));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn check_len(a: usize, b: usize) -> Result<(), EstimatorError> {
    if a == b {
        Ok(())
    } else {
        Err(EstimatorError::LengthMismatch(a, b))
    }
}

fn check_finite(values: &[f64]) -> Result<(), EstimatorError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(EstimatorError::NonFiniteValue { index }),
        None => Ok(()),
    }
}

/// `μ[j] = Σ 𝟙(R=j)·𝟙(Ŷ=1, Y=0) / Σ 𝟙(R=j)`.
pub fn hard_fpr_disparity(
    labels: &[RaceCategory],
    y: &[bool],
    y_hat: &[bool],
) -> Result<GroupValues, EstimatorError> {
    check_len(labels.len(), y.len())?;
    check_len(labels.len(), y_hat.len())?;
    let mut hits = [0u64; K];
    let mut members = [0u64; K];
    for ((r, &truth), &pred) in labels.iter().zip(y).zip(y_hat) {
        members[r.index()] += 1;
        if pred && !truth {
            hits[r.index()] += 1;
        }
    }
    Ok(std::array::from_fn(|j| (members[j] > 0).then(|| hits[j] as f64 / members[j] as f64)))
}

/// `μ[j] = Σ Pr(R_i=j)·f_i / Σ Pr(R_i=j)`.
pub fn model_perf_disparity(race_p: &[ProbVector], f: &[f64]) -> Result<GroupValues, EstimatorError> {
    weighted_group_means(race_p, f)
}

/// Same form as [`model_perf_disparity`] with the outcome `Y` in place of `f`.
pub fn output_metric_disparity(race_p: &[ProbVector], y: &[f64]) -> Result<GroupValues, EstimatorError> {
    weighted_group_means(race_p, y)
}

fn weighted_group_means(race_p: &[ProbVector], values: &[f64]) -> Result<GroupValues, EstimatorError> {
    check_len(race_p.len(), values.len())?;
    check_finite(values)?;
    Ok(std::array::from_fn(|j| {
        let mass = neumaier_sum(race_p.iter().map(|p| p.as_array()[j]));
        if mass > 0.0 {
            let num = neumaier_sum(race_p.iter().zip(values).map(|(p, v)| p.as_array()[j] * v));
            Some(num / mass)
        } else {
            None
        }
    }))
}

/// Group mass `Σ_i Pr(R_i = j)` for each group.
pub fn group_mass(race_p: &[ProbVector]) -> [f64; K] {
    std::array::from_fn(|j| neumaier_sum(race_p.iter().map(|p| p.as_array()[j])))
}

fn check_probs(probs: &[f64]) -> Result<(), EstimatorError> {
    for (index, &value) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(EstimatorError::InvalidProbability { index, value });
        }
    }
    Ok(())
}

/// `Pr(N ≥ T)` for `N` the number of successes among independent trials.
/// `T = 1` uses the closed form `1 − Π(1 − p_i)`; larger thresholds run the
/// DP truncated at `T`, in `O(n·T)`.
pub fn prob_count_equity(probs: &[f64], count_threshold: u32) -> Result<f64, EstimatorError> {
    check_probs(probs)?;
    if count_threshold == 0 {
        return Err(EstimatorError::InvalidThreshold);
    }
    let t = count_threshold as usize;
    if t == 1 {
        let none: f64 = probs.iter().map(|p| 1.0 - p).product();
        return Ok((1.0 - none).clamp(0.0, 1.0));
    }
    if t > probs.len() {
        return Ok(0.0);
    }
    // below[k] = Pr(N = k) for k < T over the trials so far; `reached`
    // absorbs all mass at or above T.
    let mut below = vec![0.0f64; t];
    below[0] = 1.0;
    let mut reached = 0.0f64;
    for &p in probs {
        reached += below[t - 1] * p;
        for k in (1..t).rev() {
            below[k] = below[k] * (1.0 - p) + below[k - 1] * p;
        }
        below[0] *= 1.0 - p;
    }
    Ok(reached.clamp(0.0, 1.0))
}

/// Exact Poisson-binomial PMF over `0..=n`.
pub fn poibin_pmf(probs: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    poibin_pmf_with_cap(probs, POIBIN_CAP)
}

pub fn poibin_pmf_with_cap(probs: &[f64], cap: usize) -> Result<Vec<f64>, EstimatorError> {
    if probs.len() > cap {
        return Err(EstimatorError::CapExceeded { n: probs.len(), cap });
    }
    check_probs(probs)?;
    let mut pmf = Vec::with_capacity(probs.len() + 1);
    pmf.push(1.0f64);
    for &p in probs {
        pmf.push(0.0);
        for k in (1..pmf.len()).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    for v in pmf.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(pmf)
}
