//! P1's data preparation: randomized response over Self-ID labels, BISG for
//! everyone else, then probabilistic clipping of every row so no record
//! shows a near-certain assignment.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Open01};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bisg::{bifsg_posterior, bisg_posterior, CensusTables, MemberIdentity};
use crate::race::{ProbVector, RaceCategory, K, SIMPLEX_TOLERANCE};

/// Default local-DP budget.
pub const DEFAULT_EPSILON: f64 = 4.5;
/// Default clipping threshold.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.825;
/// Default quantile of per-record maxima used to pick the threshold.
pub const DEFAULT_CLIP_QUANTILE: f64 = 0.9;
/// Default upper bound of the uniform reduction below the threshold.
pub const DEFAULT_REDUCTION_MARGIN: f64 = 0.05;

const MAX_CLIP_PASSES: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum PrivatizerError {
    #[error("record for `{0}` is not a one-hot vector")]
    NotOneHot(String),
    #[error("invalid epsilon {0}")]
    InvalidEpsilon(f64),
    #[error("invalid clipping configuration: {0}")]
    InvalidClipConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("quantile {0} is not in (0, 1)")]
    InvalidQuantile(f64),
    #[error("could not bring the record below the threshold {0}")]
    InfeasibleClip(f64),
    #[error("duplicate member `{0}`")]
    DuplicateMember(String),
    #[error("Self-ID member `{0}` is not in the population")]
    UnknownMember(String),
    #[error("derived threshold {0} is outside (1/6, 1)")]
    InvalidThreshold(f64),
}

/// A self-reported label, kept as its category; [`SelfIdRecord::onehot`]
/// gives the vector form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfIdRecord {
    pub member_id: String,
    pub category: RaceCategory,
}

impl SelfIdRecord {
    pub fn new(member_id: impl Into<String>, category: RaceCategory) -> Self {
        SelfIdRecord { member_id: member_id.into(), category }
    }

    pub fn from_onehot(member_id: impl Into<String>, onehot: [f64; K]) -> Result<Self, PrivatizerError> {
        let member_id = member_id.into();
        let ones: Vec<usize> = (0..K).filter(|&i| onehot[i] == 1.0).collect();
        let zeros = onehot.iter().filter(|&&x| x == 0.0).count();
        match ones.as_slice() {
            [i] if zeros == K - 1 => Ok(SelfIdRecord { member_id, category: RaceCategory::ALL[*i] }),
            _ => Err(PrivatizerError::NotOneHot(member_id)),
        }
    }

    pub fn onehot(&self) -> [f64; K] {
        *ProbVector::one_hot(self.category).as_array()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpConfig {
    pub epsilon: f64,
    pub seed: u64,
}

impl DpConfig {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self, PrivatizerError> {
        // epsilon = 0 is the degenerate uniform mechanism; still well defined.
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(PrivatizerError::InvalidEpsilon(epsilon));
        }
        Ok(DpConfig { epsilon, seed })
    }
}

/// `e^ε / (e^ε + k − 1)`, evaluated without overflow for large ε.
pub fn retention_probability(epsilon: f64) -> f64 {
    1.0 / (1.0 + (K as f64 - 1.0) * (-epsilon).exp())
}

/// Probability that randomized response changes the category.
pub fn flip_rate(epsilon: f64) -> f64 {
    1.0 - retention_probability(epsilon)
}

/// k-ary randomized response on one Self-ID record.
pub fn randomized_response<R: Rng + ?Sized>(record: &SelfIdRecord, cfg: &DpConfig, rng: &mut R) -> SelfIdRecord {
    let keep = retention_probability(cfg.epsilon);
    let u: f64 = rng.gen();
    let category = if u < keep {
        record.category
    } else {
        // Uniform over the other k - 1 categories.
        let mut j = rng.gen_range(0..K - 1);
        if j >= record.category.index() {
            j += 1;
        }
        RaceCategory::ALL[j]
    };
    SelfIdRecord { member_id: record.member_id.clone(), category }
}

/// Nearest-rank quantile of the per-record maxima: the smallest maximum such
/// that at least `quantile` of all maxima are at or below it.
pub fn compute_clip_threshold(records: &[ProbVector], quantile: f64) -> Result<f64, PrivatizerError> {
    if records.is_empty() {
        return Err(PrivatizerError::EmptyInput);
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(PrivatizerError::InvalidQuantile(quantile));
    }
    let mut maxima: Vec<f64> = records.iter().map(ProbVector::max).collect();
    maxima.sort_by(f64::total_cmp);
    let n = maxima.len();
    // The small slack keeps e.g. 0.9 * 10 from rounding up to rank 10.
    let rank = ((quantile * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(maxima[rank.min(n) - 1])
}

/// Parameters of a single clipping pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipParams {
    pub threshold: f64,
    pub reduction_margin: f64,
    pub dirichlet_alpha: [f64; K],
}

impl ClipParams {
    pub fn new(threshold: f64, reduction_margin: f64, dirichlet_alpha: [f64; K]) -> Result<Self, PrivatizerError> {
        if !(threshold > 1.0 / K as f64 && threshold < 1.0) {
            return Err(PrivatizerError::InvalidClipConfig(format!(
                "threshold {threshold} must lie in (1/6, 1)"
            )));
        }
        if !(reduction_margin > 0.0 && reduction_margin < threshold) {
            return Err(PrivatizerError::InvalidClipConfig(format!(
                "reduction margin {reduction_margin} must lie in (0, T)"
            )));
        }
        if dirichlet_alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(PrivatizerError::InvalidClipConfig("Dirichlet parameters must be positive".into()));
        }
        Ok(ClipParams { threshold, reduction_margin, dirichlet_alpha })
    }

    pub fn with_threshold(threshold: f64) -> Result<Self, PrivatizerError> {
        ClipParams::new(threshold, DEFAULT_REDUCTION_MARGIN, [1.0; K])
    }
}

/// Caps the largest coordinate strictly below the threshold.
///
/// The argmax drops to `T − u` with `u ~ Uniform(0, δ)` and the removed mass
/// goes to the other five coordinates in Dirichlet-drawn proportions. For low
/// thresholds a redistribution can push another coordinate over `T`, so the
/// pass repeats until every coordinate is below it.
pub fn clip_record<R: Rng + ?Sized>(v: &ProbVector, params: &ClipParams, rng: &mut R) -> Result<ProbVector, PrivatizerError> {
    let t = params.threshold;
    let mut p = *v.as_array();
    if v.max() < t {
        return Ok(*v);
    }
    for _ in 0..MAX_CLIP_PASSES {
        let top = argmax(&p);
        if p[top] < t {
            return finish(p, t);
        }
        let u: f64 = params.reduction_margin * Distribution::<f64>::sample(&Open01, rng);
        let target = t - u;
        let removed = p[top] - target;
        p[top] = target;

        let mut shares = [0.0; K];
        let mut total = 0.0;
        for (i, share) in shares.iter_mut().enumerate() {
            if i != top {
                let gamma = Gamma::new(params.dirichlet_alpha[i], 1.0).expect("validated alpha");
                *share = gamma.sample(rng);
                total += *share;
            }
        }
        for i in (0..K).filter(|&i| i != top) {
            p[i] += removed * shares[i] / total;
        }
    }
    Err(PrivatizerError::InfeasibleClip(t))
}

fn argmax(p: &[f64; K]) -> usize {
    (1..K).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

fn finish(p: [f64; K], t: f64) -> Result<ProbVector, PrivatizerError> {
    let out = ProbVector::new(p).map_err(|_| PrivatizerError::InfeasibleClip(t))?;
    debug_assert!((out.sum() - 1.0).abs() <= SIMPLEX_TOLERANCE);
    Ok(out)
}

/// Where a demographic row came from. Never serialized for the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordSource {
    Bisg,
    SelfId,
}

/// One row of P1's privatized table.
#[derive(Clone, Debug, PartialEq)]
pub struct DemographicRecord {
    pub member_id: String,
    pub race_p: ProbVector,
    source: RecordSource,
}

impl DemographicRecord {
    pub fn new(member_id: impl Into<String>, race_p: ProbVector) -> Self {
        DemographicRecord { member_id: member_id.into(), race_p, source: RecordSource::Bisg }
    }

    pub fn source(&self) -> RecordSource {
        self.source
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PosteriorMethod {
    #[default]
    Bisg,
    Bifsg,
}

/// How the clipping threshold is chosen for a table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipConfig {
    /// Fixed threshold; when `None` it is derived from the BISG rows.
    pub threshold: Option<f64>,
    pub quantile: f64,
    pub reduction_margin: f64,
    pub dirichlet_alpha: [f64; K],
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            threshold: Some(DEFAULT_CLIP_THRESHOLD),
            quantile: DEFAULT_CLIP_QUANTILE,
            reduction_margin: DEFAULT_REDUCTION_MARGIN,
            dirichlet_alpha: [1.0; K],
        }
    }
}

/// A privatized table plus the threshold that was applied.
#[derive(Clone, Debug, PartialEq)]
pub struct DemographicTable {
    pub records: Vec<DemographicRecord>,
    pub threshold: f64,
}

/// Deterministic per-row stream derived from `(seed, domain, member_id)`, so
/// results do not depend on processing order.
pub fn row_rng(seed: u64, domain: &str, member_id: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"ppre-row-rng-v1");
    h.update(seed.to_be_bytes());
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain.as_bytes());
    h.update(member_id.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Builds P1's demographic table.
///
/// Self-ID members get their randomized-response label as a one-hot vector,
/// everyone else gets a BISG (or BIFSG) posterior, and every row is clipped.
/// The output keeps population order.
pub fn build_demographic_table(
    selfid: &[SelfIdRecord],
    population: &[MemberIdentity],
    tables: &CensusTables,
    method: PosteriorMethod,
    dp: &DpConfig,
    clip: &ClipConfig,
) -> Result<DemographicTable, PrivatizerError> {
    let mut seen = HashSet::with_capacity(population.len());
    for m in population {
        if !seen.insert(m.member_id.as_str()) {
            return Err(PrivatizerError::DuplicateMember(m.member_id.clone()));
        }
    }
    let mut labels: HashMap<&str, &SelfIdRecord> = HashMap::with_capacity(selfid.len());
    for s in selfid {
        if !seen.contains(s.member_id.as_str()) {
            return Err(PrivatizerError::UnknownMember(s.member_id.clone()));
        }
        if labels.insert(s.member_id.as_str(), s).is_some() {
            return Err(PrivatizerError::DuplicateMember(s.member_id.clone()));
        }
    }

    let mut rows: Vec<(String, ProbVector, RecordSource)> = Vec::with_capacity(population.len());
    for member in population {
        let row = match labels.get(member.member_id.as_str()) {
            Some(record) => {
                let mut rng = row_rng(dp.seed, "randomized-response", &member.member_id);
                let noisy = randomized_response(record, dp, &mut rng);
                (member.member_id.clone(), ProbVector::one_hot(noisy.category), RecordSource::SelfId)
            }
            None => {
                let p = match method {
                    PosteriorMethod::Bisg => bisg_posterior(member, tables),
                    PosteriorMethod::Bifsg => bifsg_posterior(member, tables),
                };
                (member.member_id.clone(), p, RecordSource::Bisg)
            }
        };
        rows.push(row);
    }

    let threshold = match clip.threshold {
        Some(t) => t,
        None => {
            let bisg: Vec<ProbVector> = rows
                .iter()
                .filter(|r| r.2 == RecordSource::Bisg)
                .map(|r| r.1)
                .collect();
            let t = compute_clip_threshold(&bisg, clip.quantile)?;
            if !(t > 1.0 / K as f64 && t < 1.0) {
                return Err(PrivatizerError::InvalidThreshold(t));
            }
            t
        }
    };
    let params = ClipParams::new(threshold, clip.reduction_margin, clip.dirichlet_alpha)?;

    let mut records = Vec::with_capacity(rows.len());
    for (member_id, p, source) in rows {
        let mut rng = row_rng(dp.seed, "clip", &member_id);
        let race_p = clip_record(&p, &params, &mut rng)?;
        records.push(DemographicRecord { member_id, race_p, source });
    }
    Ok(DemographicTable { records, threshold })
}
