//! Synthetic members drawn from a factorized census joint, with ground truth.
//!
//! A member is drawn as `s ~ Pr(s)`, `r ~ Pr(r|s)`, `g ~ Pr(g|r)` and
//! `f ~ Pr(f|r)`, so the BISG independence assumption holds exactly. P2's
//! table covers a configurable share of the population plus outsiders P1
//! has never seen.

use rand::distributions::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::bisg::MemberIdentity;
use crate::census::{FactorizedJoint, SyntheticCensus};
use crate::estimators::EstimatorSpec;
use crate::privatizer::SelfIdRecord;
use crate::protocol::P2Input;
use crate::race::{RaceCategory, K};

/// Self-ID coverage used when none is given.
pub const DEFAULT_SELFID_COVERAGE: f64 = 0.06;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic-data parameter: {0}")]
    InvalidParameter(String),
}

/// A population and each member's true category.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<MemberIdentity>,
    pub truth: Vec<RaceCategory>,
}

pub fn member_id(i: usize) -> String {
    format!("M{i:08}")
}

fn weighted(weights: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(weights).expect("table rows carry positive mass")
}

/// `n` members ids `M00000000..`, drawn from `joint`.
pub fn generate_population(joint: &FactorizedJoint, n: usize, seed: u64) -> Population {
    generate_population_from(joint, 0, n, seed)
}

/// As [`generate_population`], with ids starting at `first_id`.
pub fn generate_population_from(joint: &FactorizedJoint, first_id: usize, n: usize, seed: u64) -> Population {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let surname = weighted(&joint.surname_marginal);
    let race_given_surname: Vec<_> = joint.race_given_surname.iter().map(|row| weighted(row)).collect();
    let column = |table: &[[f64; K]], r: usize| weighted(&table.iter().map(|row| row[r]).collect::<Vec<_>>());
    let geo_given_race: Vec<_> = (0..K).map(|r| column(&joint.geo_given_race, r)).collect();
    let first_given_race: Vec<_> = (0..K).map(|r| column(&joint.first_given_race, r)).collect();

    let mut members = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let s = surname.sample(&mut rng);
        let r = race_given_surname[s].sample(&mut rng);
        let g = geo_given_race[r].sample(&mut rng);
        let f = first_given_race[r].sample(&mut rng);
        members.push(MemberIdentity {
            member_id: member_id(first_id + i),
            first_name: Some(joint.first_names[f].clone()),
            surname: joint.surnames[s].clone(),
            zcta: joint.zctas[g].clone(),
        });
        truth.push(RaceCategory::ALL[r]);
    }
    Population { members, truth }
}

fn check_fraction(name: &str, x: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(SynthError::InvalidParameter(format!("{name} must lie in [0, 1], got {x}")))
    }
}

/// True labels for a uniformly chosen `coverage` share of the population,
/// in population order.
pub fn sample_selfid(pop: &Population, coverage: f64, seed: u64) -> Result<Vec<SelfIdRecord>, SynthError> {
    check_fraction("coverage", coverage)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = pop.members.len();
    let take = (coverage * n as f64).round() as usize;
    let mut chosen = sample(&mut rng, n, take).into_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| SelfIdRecord::new(pop.members[i].member_id.clone(), pop.truth[i]))
        .collect())
}

/// One row of P2's raw table: an outcome `y` and a model score `y_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct P2Truth {
    pub member_id: String,
    pub y: f64,
    pub y_hat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct P2Config {
    pub seed: u64,
    /// Share of the population present in P2's table.
    pub overlap: f64,
    /// Rows for members outside the population.
    pub outsiders: usize,
    /// Positive-outcome rate per category.
    pub base_rate: [f64; K],
    /// Chance the model score lands on the wrong side of 0.5.
    pub error_rate: [f64; K],
}

impl Default for P2Config {
    fn default() -> Self {
        P2Config {
            seed: 0,
            overlap: 1.0,
            outsiders: 0,
            base_rate: [0.30, 0.25, 0.28, 0.22, 0.35, 0.27],
            error_rate: [0.10, 0.16, 0.13, 0.18, 0.09, 0.14],
        }
    }
}

/// P2's table. Outsider ids continue after the population's.
pub fn generate_p2_truth(pop: &Population, cfg: &P2Config) -> Result<Vec<P2Truth>, SynthError> {
    check_fraction("overlap", cfg.overlap)?;
    for (&b, &e) in cfg.base_rate.iter().zip(&cfg.error_rate) {
        check_fraction("base rate", b)?;
        check_fraction("error rate", e)?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let n = pop.members.len();
    let take = (cfg.overlap * n as f64).round() as usize;
    let mut chosen = sample(&mut rng, n, take).into_vec();
    chosen.sort_unstable();
    let draw = |id: String, r: usize, rng: &mut ChaCha20Rng| {
        let y = rng.gen_bool(cfg.base_rate[r]);
        let wrong = rng.gen_bool(cfg.error_rate[r]);
        let side = y != wrong;
        let margin: f64 = rng.gen_range(0.0..0.5);
        let y_hat = if side { 0.5 + margin } else { 0.5 - margin - f64::EPSILON };
        P2Truth { member_id: id, y: y as u8 as f64, y_hat: y_hat.clamp(0.0, 1.0) }
    };
    let mut out = Vec::with_capacity(take + cfg.outsiders);
    for i in chosen {
        let r = pop.truth[i].index();
        out.push(draw(pop.members[i].member_id.clone(), r, &mut rng));
    }
    for j in 0..cfg.outsiders {
        let r = rng.gen_range(0..K);
        out.push(draw(member_id(n + j), r, &mut rng));
    }
    Ok(out)
}

/// The per-row values `spec` consumes.
pub fn p2_inputs(truth: &[P2Truth], spec: &EstimatorSpec) -> Vec<P2Input> {
    let arity = spec.arity();
    truth
        .iter()
        .map(|t| P2Input {
            member_id: t.member_id.clone(),
            values: if arity == 0 { Vec::new() } else { vec![spec.row_value(t.y, t.y_hat)] },
        })
        .collect()
}

/// Census, population, Self-ID sample and P2 table in one call.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub census: SyntheticCensus,
    pub population: Population,
    pub selfid: Vec<SelfIdRecord>,
    pub p2: Vec<P2Truth>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub members: usize,
    pub n_surnames: usize,
    pub n_zctas: usize,
    pub concentration: f64,
    pub selfid_coverage: f64,
    pub p2: P2Config,
}

impl ScenarioConfig {
    pub fn new(seed: u64, members: usize) -> Self {
        ScenarioConfig {
            seed,
            members,
            n_surnames: 500,
            n_zctas: 200,
            concentration: 0.5,
            selfid_coverage: DEFAULT_SELFID_COVERAGE,
            p2: P2Config { seed: seed ^ 0x5032, ..P2Config::default() },
        }
    }
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    let census = crate::census::generate_synthetic_census(cfg.seed, cfg.n_surnames, cfg.n_zctas, cfg.concentration)
        .map_err(|e| SynthError::InvalidParameter(e.to_string()))?;
    let population = generate_population(&census.joint, cfg.members, cfg.seed.wrapping_add(1));
    let selfid = sample_selfid(&population, cfg.selfid_coverage, cfg.seed.wrapping_add(2))?;
    let p2 = generate_p2_truth(&population, &cfg.p2)?;
    Ok(Scenario { census, population, selfid, p2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::census::generate_synthetic_census;

    #[test]
    fn population_is_deterministic_and_follows_truth() {
        let census = generate_synthetic_census(3, 50, 20, 0.5).unwrap();
        let a = generate_population(&census.joint, 2000, 9);
        assert_eq!(a, generate_population(&census.joint, 2000, 9));
        assert_ne!(a, generate_population(&census.joint, 2000, 10));
        assert_eq!(a.members[17].member_id, "M00000017");
        let marginal = census.joint.race_marginal();
        let mut counts = [0usize; K];
        for r in &a.truth {
            counts[r.index()] += 1;
        }
        for r in 0..K {
            let p = marginal[r];
            let sigma = (p * (1.0 - p) / 2000.0).sqrt();
            assert!((counts[r] as f64 / 2000.0 - p).abs() < 5.0 * sigma + 1e-3, "{counts:?} vs {marginal:?}");
        }
    }

    #[test]
    fn selfid_coverage() {
        let census = generate_synthetic_census(3, 50, 20, 0.5).unwrap();
        let pop = generate_population(&census.joint, 1000, 1);
        let s = sample_selfid(&pop, 0.06, 2).unwrap();
        assert_eq!(s.len(), 60);
        assert!(sample_selfid(&pop, 0.0, 2).unwrap().is_empty());
        assert!(sample_selfid(&pop, 1.5, 2).is_err());
        let idx: std::collections::HashMap<_, _> =
            pop.members.iter().zip(&pop.truth).map(|(m, t)| (m.member_id.as_str(), *t)).collect();
        for r in &s {
            assert_eq!(idx[r.member_id.as_str()], r.category);
        }
    }

    #[test]
    fn p2_table_overlap_and_outsiders() {
        let census = generate_synthetic_census(3, 50, 20, 0.5).unwrap();
        let pop = generate_population(&census.joint, 1000, 1);
        let cfg = P2Config { seed: 4, overlap: 0.5, outsiders: 30, ..P2Config::default() };
        let t = generate_p2_truth(&pop, &cfg).unwrap();
        assert_eq!(t.len(), 530);
        assert_eq!(t.iter().filter(|r| r.member_id.as_str() >= "M00001000").count(), 30);
        for r in &t {
            assert!(r.y == 0.0 || r.y == 1.0);
            assert!((0.0..=1.0).contains(&r.y_hat) && r.y_hat != 0.5);
        }
        let inputs = p2_inputs(&t, &EstimatorSpec::output_metric());
        assert!(inputs.iter().zip(&t).all(|(i, r)| i.values == vec![r.y]));
        let counts = p2_inputs(&t, &EstimatorSpec::prob_count(RaceCategory::Black, 1, 0.9).unwrap());
        assert!(counts.iter().all(|i| i.values.is_empty()));
    }
}
