//! BISG / BIFSG posteriors, a brute-force joint-table oracle, and the
//! cross-entropy validation metric.

use std::collections::HashMap;

use thiserror::Error;

use crate::census::{normalize_name, FactorizedJoint, FirstnameTable, GeoTable, RacePrior, SurnameTable, SyntheticCensus};
use crate::race::{neumaier_sum, ProbVector, RaceCategory, K};

/// Floor applied to probabilities inside the cross-entropy log.
pub const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

/// Largest joint table [`brute_force_posterior`] will enumerate.
pub const MAX_JOINT_CELLS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BisgError {
    #[error("evidence Pr(s, g) is zero for this identity")]
    ZeroEvidence,
    #[error("length mismatch: {posteriors} posteriors vs {labels} labels")]
    LengthMismatch { posteriors: usize, labels: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("joint table has {0} cells, more than the enumeration limit")]
    JointTooLarge(usize),
    #[error("joint table shape mismatch: expected {expected} cells, got {actual}")]
    JointShape { expected: usize, actual: usize },
}

/// The identifying attributes of one member.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemberIdentity {
    pub member_id: String,
    pub first_name: Option<String>,
    pub surname: String,
    pub zcta: String,
}

/// Everything the posterior needs.
#[derive(Clone, Debug)]
pub struct CensusTables {
    pub surnames: SurnameTable,
    pub geo: GeoTable,
    pub firstnames: Option<FirstnameTable>,
    pub prior: RacePrior,
}

impl From<&SyntheticCensus> for CensusTables {
    fn from(c: &SyntheticCensus) -> Self {
        CensusTables {
            surnames: c.surnames.clone(),
            geo: c.geo.clone(),
            firstnames: Some(c.firstnames.clone()),
            prior: c.prior,
        }
    }
}

fn product_posterior(factors: &[&[f64; K]]) -> Option<ProbVector> {
    let mut weights = [1.0; K];
    for f in factors {
        for r in 0..K {
            weights[r] *= f[r];
        }
    }
    ProbVector::normalized(weights).ok()
}

/// `Pr(r | s, g) ∝ Pr(r | s) · Pr(g | r)`.
///
/// A missing surname is replaced by the prior, a missing ZCTA by a flat
/// likelihood, and when both miss the prior is returned. If every product is
/// zero the surname distribution alone is used.
pub fn bisg_posterior(identity: &MemberIdentity, tables: &CensusTables) -> ProbVector {
    let surname = tables.surnames.get(&identity.surname).map(|e| &e.probs);
    let geo = tables.geo.get(&identity.zcta);
    let prior = *tables.prior.probs();
    let surname_factor = surname.copied().unwrap_or(prior);
    match geo {
        None if surname.is_none() => prior,
        None => surname_factor,
        Some(likelihood) => {
            product_posterior(&[surname_factor.as_array(), likelihood]).unwrap_or(surname_factor)
        }
    }
}

/// `Pr(r | f, s, g) ∝ Pr(r | s) · Pr(g | r) · Pr(f | r)`.
///
/// Degrades to [`bisg_posterior`] when the first name is absent, unknown to
/// the table, or no first-name table is loaded.
pub fn bifsg_posterior(identity: &MemberIdentity, tables: &CensusTables) -> ProbVector {
    let base = bisg_posterior(identity, tables);
    let first = match (&identity.first_name, &tables.firstnames) {
        (Some(name), Some(table)) => table.get(name),
        _ => None,
    };
    match first {
        Some(likelihood) => product_posterior(&[base.as_array(), likelihood]).unwrap_or(base),
        None => base,
    }
}

/// Dense joint probability table over `(r, s, g, f)` for small instances.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    surnames: HashMap<String, usize>,
    zctas: HashMap<String, usize>,
    first_names: Option<HashMap<String, usize>>,
    dims: (usize, usize, usize),
    cells: Vec<f64>,
}

impl JointTable {
    /// `cells` is laid out as `[r][s][g][f]`; `f` has extent 1 when
    /// `first_names` is `None`.
    pub fn new(
        surnames: &[String],
        zctas: &[String],
        first_names: Option<&[String]>,
        cells: Vec<f64>,
    ) -> Result<Self, BisgError> {
        let f_len = first_names.map_or(1, <[String]>::len);
        let expected = K * surnames.len() * zctas.len() * f_len;
        if expected > MAX_JOINT_CELLS {
            return Err(BisgError::JointTooLarge(expected));
        }
        if cells.len() != expected {
            return Err(BisgError::JointShape { expected, actual: cells.len() });
        }
        let index = |names: &[String], normalize: bool| -> HashMap<String, usize> {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (if normalize { normalize_name(n) } else { n.clone() }, i))
                .collect()
        };
        Ok(JointTable {
            surnames: index(surnames, true),
            zctas: index(zctas, false),
            first_names: first_names.map(|f| index(f, true)),
            dims: (surnames.len(), zctas.len(), f_len),
            cells,
        })
    }

    /// Expands a factorized joint into its dense table.
    pub fn from_factorized(joint: &FactorizedJoint, with_first_names: bool) -> Result<Self, BisgError> {
        let (s_len, g_len) = (joint.surnames.len(), joint.zctas.len());
        let f_len = if with_first_names { joint.first_names.len() } else { 1 };
        let total = K * s_len * g_len * f_len;
        if total > MAX_JOINT_CELLS {
            return Err(BisgError::JointTooLarge(total));
        }
        let mut cells = Vec::with_capacity(total);
        for r in 0..K {
            for s in 0..s_len {
                let ps = joint.surname_marginal[s] * joint.race_given_surname[s][r];
                for g in 0..g_len {
                    let psg = ps * joint.geo_given_race[g][r];
                    if with_first_names {
                        cells.extend(joint.first_given_race.iter().map(|f| psg * f[r]));
                    } else {
                        cells.push(psg);
                    }
                }
            }
        }
        let first = with_first_names.then_some(joint.first_names.as_slice());
        JointTable::new(&joint.surnames, &joint.zctas, first, cells)
    }

    fn cell(&self, r: usize, s: usize, g: usize, f: usize) -> f64 {
        let (s_len, g_len, f_len) = self.dims;
        self.cells[((r * s_len + s) * g_len + g) * f_len + f]
    }
}

/// Exact `Pr(r | s, g[, f]) = Pr(r, s, g[, f]) / Σ_r Pr(r, s, g[, f])` by enumeration.
///
/// The first name conditions the query only when both the table and the
/// identity carry one; otherwise it is marginalized out.
pub fn brute_force_posterior(identity: &MemberIdentity, joint: &JointTable) -> Result<ProbVector, BisgError> {
    let s = *joint
        .surnames
        .get(&normalize_name(&identity.surname))
        .ok_or(BisgError::ZeroEvidence)?;
    let g = *joint.zctas.get(identity.zcta.trim()).ok_or(BisgError::ZeroEvidence)?;
    let f_range: Vec<usize> = match (&joint.first_names, &identity.first_name) {
        (Some(index), Some(name)) => vec![*index.get(&normalize_name(name)).ok_or(BisgError::ZeroEvidence)?],
        _ => (0..joint.dims.2).collect(),
    };
    let mut numer = [0.0; K];
    for (r, slot) in numer.iter_mut().enumerate() {
        *slot = neumaier_sum(f_range.iter().map(|&f| joint.cell(r, s, g, f)));
    }
    let evidence = neumaier_sum(numer);
    if !(evidence > 0.0) {
        return Err(BisgError::ZeroEvidence);
    }
    Ok(ProbVector::from_raw_unchecked(numer.map(|x| x / evidence)))
}

/// Mean of `-ln(posterior[label])`, with probabilities floored at
/// [`CROSS_ENTROPY_FLOOR`].
pub fn cross_entropy(posteriors: &[ProbVector], labels: &[RaceCategory]) -> Result<f64, BisgError> {
    if posteriors.len() != labels.len() {
        return Err(BisgError::LengthMismatch {
            posteriors: posteriors.len(),
            labels: labels.len(),
        });
    }
    if posteriors.is_empty() {
        return Err(BisgError::EmptyInput);
    }
    let total = neumaier_sum(
        posteriors
            .iter()
            .zip(labels)
            .map(|(p, &l)| -p.get(l).max(CROSS_ENTROPY_FLOOR).ln()),
    );
    Ok(total / posteriors.len() as f64)
}
