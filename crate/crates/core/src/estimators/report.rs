//! Flat `key=value` report format.
//!
//! ```text
//! # ppre aggregate report v1
//! estimator=model_perf
//! metric=false_positive
//! sample_size=10000
//! mu.white=0.0412
//! mu.black=absent
//! ...
//! meta.session_id=...
//! ```
//!
//! `mu.<group>` lines appear for every group for mean estimators, with
//! `absent` marking zero membership mass. The inclusiveness estimator writes
//! `p_equity`, `target_group`, `count_threshold`, `certainty` and
//! `meets_certainty` instead. Unknown `meta.*` keys are preserved.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{EstimatorKind, EstimatorSpec, GroupValues, MetricDescriptor};
use crate::race::{RaceCategory, K};

const HEADER: &str = "# ppre aggregate report v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("report is missing `{0}`")]
    Missing(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub kind: EstimatorKind,
    pub metric: Option<MetricDescriptor>,
    pub groups: GroupValues,
    pub p_equity: Option<f64>,
    pub target_group: Option<RaceCategory>,
    pub count_threshold: Option<u32>,
    pub certainty: Option<f64>,
    /// Joined rows contributing to the estimate.
    pub sample_size: u64,
    pub metadata: BTreeMap<String, String>,
}

impl AggregateReport {
    pub fn means(spec: &EstimatorSpec, groups: GroupValues, sample_size: u64) -> Self {
        let metric = matches!(spec.kind, EstimatorKind::ModelPerf | EstimatorKind::HardFpr).then_some(spec.metric);
        AggregateReport {
            kind: spec.kind,
            metric,
            groups,
            p_equity: None,
            target_group: None,
            count_threshold: None,
            certainty: None,
            sample_size,
            metadata: BTreeMap::new(),
        }
    }

    pub fn equity(spec: &EstimatorSpec, p_equity: f64, pool_size: u64) -> Self {
        AggregateReport {
            kind: EstimatorKind::ProbCount,
            metric: None,
            groups: [None; K],
            p_equity: Some(p_equity),
            target_group: Some(spec.target_group),
            count_threshold: Some(spec.count_threshold),
            certainty: Some(spec.certainty),
            sample_size: pool_size,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn group(&self, c: RaceCategory) -> Option<f64> {
        self.groups[c.index()]
    }

    /// `P_Equity ≥ certainty`.
    pub fn meets_certainty(&self) -> Option<bool> {
        Some(self.p_equity? >= self.certainty?)
    }

    /// Largest per-group absolute difference, or `None` when the two reports
    /// disagree on which groups (or equity value) are present.
    pub fn max_abs_diff(&self, other: &AggregateReport) -> Option<f64> {
        let mut worst = 0.0f64;
        for j in 0..K {
            match (self.groups[j], other.groups[j]) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return None,
            }
        }
        match (self.p_equity, other.p_equity) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => return None,
        }
        Some(worst)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "estimator={}", self.kind);
        if let Some(m) = self.metric {
            let _ = writeln!(out, "metric={m}");
        }
        let _ = writeln!(out, "sample_size={}", self.sample_size);
        if self.kind != EstimatorKind::ProbCount {
            for c in RaceCategory::ALL {
                match self.groups[c.index()] {
                    Some(v) => writeln!(out, "mu.{}={v}", c.key()),
                    None => writeln!(out, "mu.{}=absent", c.key()),
                }
                .expect("writing to a String");
            }
        }
        if let Some(p) = self.p_equity {
            let _ = writeln!(out, "p_equity={p}");
        }
        if let Some(g) = self.target_group {
            let _ = writeln!(out, "target_group={}", g.key());
        }
        if let Some(t) = self.count_threshold {
            let _ = writeln!(out, "count_threshold={t}");
        }
        if let Some(c) = self.certainty {
            let _ = writeln!(out, "certainty={c}");
        }
        if let Some(m) = self.meets_certainty() {
            let _ = writeln!(out, "meets_certainty={m}");
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ReportError> {
        let mut kind = None;
        let mut report = AggregateReport {
            kind: EstimatorKind::OutputMetric,
            metric: None,
            groups: [None; K],
            p_equity: None,
            target_group: None,
            count_threshold: None,
            certainty: None,
            sample_size: 0,
            metadata: BTreeMap::new(),
        };
        let mut sample_size = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ReportError::Parse { line, message };
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| err(format!("no `=` in `{l}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
            if let Some(meta) = k.strip_prefix("meta.") {
                report.metadata.insert(meta.to_string(), v.to_string());
                continue;
            }
            if let Some(group) = k.strip_prefix("mu.") {
                let c: RaceCategory = group.parse().map_err(|_| err(format!("unknown group `{group}`")))?;
                report.groups[c.index()] = if v == "absent" { None } else { Some(num(v)?) };
                continue;
            }
            match k {
                "estimator" => kind = Some(v.parse::<EstimatorKind>().map_err(|e| err(e.to_string()))?),
                "metric" => report.metric = Some(v.parse().map_err(|e: super::EstimatorError| err(e.to_string()))?),
                "sample_size" => sample_size = Some(v.parse::<u64>().map_err(|e| err(e.to_string()))?),
                "p_equity" => report.p_equity = Some(num(v)?),
                "target_group" => {
                    report.target_group = Some(v.parse().map_err(|_| err(format!("unknown group `{v}`")))?)
                }
                "count_threshold" => {
                    report.count_threshold = Some(v.parse().map_err(|_| err(format!("bad threshold `{v}`")))?)
                }
                "certainty" => report.certainty = Some(num(v)?),
                "meets_certainty" => {}
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        report.kind = kind.ok_or(ReportError::Missing("estimator"))?;
        report.sample_size = sample_size.ok_or(ReportError::Missing("sample_size"))?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let spec = EstimatorSpec::model_perf(MetricDescriptor::FalsePositive);
        let r = AggregateReport::means(&spec, [Some(0.1), None, Some(1.0 / 3.0), Some(0.0), Some(-2.5e-7), None], 42)
            .with_meta("session_id", "abc");
        let text = r.to_text();
        assert!(text.contains("mu.black=absent"));
        assert_eq!(AggregateReport::from_text(&text).unwrap(), r);

        let spec = EstimatorSpec::prob_count(RaceCategory::AsianPacificIslander, 2, 0.9).unwrap_or_else(|_| unreachable!());
        let e = AggregateReport::equity(&spec, 0.95, 10);
        assert_eq!(e.meets_certainty(), Some(true));
        assert!(e.to_text().contains("meets_certainty=true"));
        assert_eq!(AggregateReport::from_text(&e.to_text()).unwrap(), e);
    }

    #[test]
    fn parse_errors_and_diffs() {
        assert_eq!(AggregateReport::from_text("sample_size=1\n"), Err(ReportError::Missing("estimator")));
        assert!(matches!(
            AggregateReport::from_text("estimator=model_perf\nmu.white=x\n"),
            Err(ReportError::Parse { line: 2, .. })
        ));
        let spec = EstimatorSpec::output_metric();
        let a = AggregateReport::means(&spec, [Some(1.0), None, None, None, None, None], 1);
        let b = AggregateReport::means(&spec, [Some(1.5), None, None, None, None, None], 1);
        let c = AggregateReport::means(&spec, [Some(1.0), Some(0.0), None, None, None, None], 1);
        assert_eq!(a.max_abs_diff(&b), Some(0.5));
        assert_eq!(a.max_abs_diff(&c), None);
    }
}
