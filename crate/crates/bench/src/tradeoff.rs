//! Joining complexity reports with published accuracies, and the
//! accuracy/complexity efficiency frontier.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::emit::ReportRow;
use crate::error::{BenchError, Result};
use crate::fixture::AccuracyFixture;
use crate::key::ConfigKey;
use crate::sweep::SweepRecord;

/// Complexity measure on the x axis. Both use totals, so BU configurations
/// carry their detector offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Params,
    Flops,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Params => "params",
            Axis::Flops => "flops",
        }
    }

    pub fn of(self, row: &ReportRow) -> u64 {
        match self {
            Axis::Params => row.report.total_params,
            Axis::Flops => row.report.total_flops,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "params" => Ok(Axis::Params),
            "flops" => Ok(Axis::Flops),
            _ => Err(BenchError::Config(format!("unknown axis '{s}' (valid: params, flops)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub config_key: String,
    pub complexity: u64,
    pub accuracy: f64,
}

impl TradeoffPoint {
    pub fn new(config_key: impl Into<String>, complexity: u64, accuracy: f64) -> TradeoffPoint {
        TradeoffPoint {
            config_key: config_key.into(),
            complexity,
            accuracy,
        }
    }
}

/// Result of [`join_tradeoff`]: matched rows plus both sides' leftovers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tradeoff {
    pub dataset: String,
    pub axis: Axis,
    /// Matched rows, every one with an accuracy, sorted by config key.
    pub rows: Vec<ReportRow>,
    /// Config keys of reports with no fixture row.
    pub unmatched_reports: Vec<String>,
    /// Config keys of fixture rows with no report.
    pub unmatched_fixture: Vec<String>,
}

impl Tradeoff {
    pub fn points(&self) -> Vec<TradeoffPoint> {
        self.rows
            .iter()
            .map(|r| TradeoffPoint::new(r.config_key(), self.axis.of(r), r.accuracy.expect("joined rows carry accuracy")))
            .collect()
    }

    /// The rows lying on the efficiency frontier, sorted by config key.
    pub fn frontier(&self) -> Tradeoff {
        let keep: Vec<String> = efficiency_frontier(&self.points()).into_iter().map(|p| p.config_key).collect();
        Tradeoff {
            rows: self.rows.iter().filter(|r| keep.contains(&r.config_key())).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Inner join of `records` with the rows of `fixture` on
/// (feature, feature_kind, fusion, attention). The fixture must hold a
/// single dataset (see [`AccuracyFixture::for_dataset`]) and must not come
/// from toy training.
pub fn join_tradeoff(records: &[SweepRecord], fixture: &AccuracyFixture, axis: Axis) -> Result<Tradeoff> {
    if fixture.toy {
        return Err(BenchError::Config(format!(
            "{} holds toy-trained accuracies, which are unrelated to the published numbers and cannot be joined",
            fixture.source
        )));
    }
    let datasets = fixture.datasets();
    if datasets.len() > 1 {
        return Err(BenchError::Config(format!(
            "{} holds several datasets; pick one of: {}",
            fixture.source,
            datasets.join(", ")
        )));
    }
    let accuracy: HashMap<&ConfigKey, f64> = fixture.rows.iter().map(|r| (&r.key, r.accuracy)).collect();
    let mut rows = Vec::new();
    let mut unmatched_reports = Vec::new();
    for rec in records {
        match accuracy.get(&rec.key) {
            Some(&a) => rows.push(ReportRow::new(rec.clone(), Some(a))),
            None => unmatched_reports.push(rec.key.to_string()),
        }
    }
    let mut unmatched_fixture: Vec<String> = fixture
        .rows
        .iter()
        .filter(|r| !records.iter().any(|rec| rec.key == r.key))
        .map(|r| r.key.to_string())
        .collect();
    rows.sort_by_key(ReportRow::config_key);
    unmatched_reports.sort();
    unmatched_fixture.sort();
    Ok(Tradeoff {
        dataset: datasets.first().map_or(String::new(), |d| d.to_string()),
        axis,
        rows,
        unmatched_reports,
        unmatched_fixture,
    })
}

fn same_position(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    a.complexity == b.complexity && a.accuracy == b.accuracy
}

/// Pareto-optimal points under (minimize complexity, maximize accuracy),
/// sorted by complexity. Among points at identical coordinates only the
/// lexicographically smallest config key is kept.
pub fn efficiency_frontier(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut sorted: Vec<&TradeoffPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.complexity
            .cmp(&b.complexity)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.config_key.cmp(&b.config_key))
    });
    let mut out: Vec<TradeoffPoint> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for p in sorted {
        if p.accuracy > best {
            best = p.accuracy;
            out.push(p.clone());
        }
    }
    out
}

/// Quadratic pairwise-dominance reference for [`efficiency_frontier`].
pub fn frontier_oracle(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let dominates = |q: &TradeoffPoint, p: &TradeoffPoint| {
        q.complexity <= p.complexity
            && q.accuracy >= p.accuracy
            && (q.complexity < p.complexity || q.accuracy > p.accuracy)
    };
    let mut out: Vec<TradeoffPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .filter(|p| {
            !points
                .iter()
                .any(|q| same_position(q, p) && q.config_key < p.config_key)
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| match a.complexity.cmp(&b.complexity) {
        Ordering::Equal => a.config_key.cmp(&b.config_key),
        o => o,
    });
    out
}
