//! The plaintext reference pipeline: the same join and estimator as the
//! protocol with no encryption at all.

use std::collections::HashMap;

use crate::estimators::{model_perf_disparity, prob_count_equity, AggregateReport, EstimatorKind, EstimatorSpec};
use crate::privatizer::DemographicRecord;
use crate::protocol::{P2Input, ProtocolError};
use crate::race::ProbVector;

/// Inner join of P1's table with P2's values on member id, in P2's order.
pub fn plaintext_join(
    table: &[DemographicRecord],
    values: &[P2Input],
) -> Result<Vec<(ProbVector, Vec<f64>)>, ProtocolError> {
    let mut index: HashMap<&str, &ProbVector> = HashMap::with_capacity(table.len());
    for rec in table {
        if index.insert(rec.member_id.as_str(), &rec.race_p).is_some() {
            return Err(ProtocolError::DuplicateJoinKey);
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(values.len());
    let mut out = Vec::new();
    for row in values {
        if !seen.insert(row.member_id.as_str()) {
            return Err(ProtocolError::DuplicateJoinKey);
        }
        if let Some(p) = index.get(row.member_id.as_str()) {
            out.push((**p, row.values.clone()));
        }
    }
    Ok(out)
}

/// The report the protocol should produce for these inputs.
pub fn oracle_report(
    spec: &EstimatorSpec,
    table: &[DemographicRecord],
    values: &[P2Input],
) -> Result<AggregateReport, ProtocolError> {
    spec.validate()?;
    let arity = spec.arity();
    if let Some(bad) = values.iter().find(|r| r.values.len() != arity) {
        return Err(ProtocolError::ArityMismatch { expected: arity, found: bad.values.len() });
    }
    let joined = plaintext_join(table, values)?;
    if joined.is_empty() {
        return Err(ProtocolError::EmptyJoin);
    }
    let n = joined.len() as u64;
    if spec.kind == EstimatorKind::ProbCount {
        let probs: Vec<f64> = joined.iter().map(|(p, _)| p.get(spec.target_group)).collect();
        let p = prob_count_equity(&probs, spec.count_threshold)?;
        return Ok(AggregateReport::equity(spec, p, n));
    }
    spec.protocol_supported()?;
    let (race_p, vals): (Vec<ProbVector>, Vec<f64>) = joined.into_iter().map(|(p, v)| (p, v[0])).unzip();
    let groups = model_perf_disparity(&race_p, &vals)?;
    Ok(AggregateReport::means(spec, groups, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::race::RaceCategory;

    fn rec(id: &str, c: RaceCategory) -> DemographicRecord {
        DemographicRecord::new(id, ProbVector::one_hot(c))
    }

    fn val(id: &str, v: f64) -> P2Input {
        P2Input { member_id: id.into(), values: vec![v] }
    }

    #[test]
    fn joins_on_intersection() {
        let table = vec![rec("a", RaceCategory::White), rec("b", RaceCategory::Black), rec("c", RaceCategory::White)];
        let values = vec![val("b", 0.0), val("c", 1.0), val("d", 5.0)];
        assert_eq!(plaintext_join(&table, &values).unwrap().len(), 2);
        let r = oracle_report(&EstimatorSpec::output_metric(), &table, &values).unwrap();
        assert_eq!(r.group(RaceCategory::White), Some(1.0));
        assert_eq!(r.group(RaceCategory::Black), Some(0.0));
        assert_eq!(r.group(RaceCategory::Hispanic), None);
        assert_eq!(r.sample_size, 2);
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let table = vec![rec("a", RaceCategory::White)];
        let values = vec![val("z", 1.0)];
        assert_eq!(oracle_report(&EstimatorSpec::output_metric(), &table, &values), Err(ProtocolError::EmptyJoin));
    }

    #[test]
    fn duplicates_are_rejected() {
        let table = vec![rec("a", RaceCategory::White), rec("a", RaceCategory::Black)];
        assert_eq!(plaintext_join(&table, &[]).unwrap_err(), ProtocolError::DuplicateJoinKey);
        let table = vec![rec("a", RaceCategory::White)];
        assert_eq!(plaintext_join(&table, &[val("a", 1.0), val("a", 2.0)]).unwrap_err(), ProtocolError::DuplicateJoinKey);
    }
}
