// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("query {0} has no ground-truth blocks")]
    EmptyGroundTruth(String),
    #[error("no queries to evaluate")]
    NoQueries,
}

pub const CUTOFFS: [usize; 3] = [1, 5, 10];

/// 1-based rank of the first relevant item.
pub fn first_relevant_rank(ranking: &[String], gt: &BTreeSet<String>) -> Option<usize> {
    ranking.iter().position(|b| gt.contains(b)).map(|p| p + 1)
}

pub fn reciprocal_rank(ranking: &[String], gt: &BTreeSet<String>) -> f64 {
    first_relevant_rank(ranking, gt).map_or(0.0, |r| 1.0 / r as f64)
}

/// Precision at each relevant rank, summed and divided by `|gt|`. Relevant
/// items missing from the ranking contribute zero.
pub fn average_precision(ranking: &[String], gt: &BTreeSet<String>) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, b) in ranking.iter().enumerate() {
        if gt.contains(b) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / gt.len() as f64
}

pub fn recall_at_k(ranking: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let found = ranking.iter().take(k).filter(|b| gt.contains(*b)).count();
    found as f64 / gt.len() as f64
}

pub fn hit_at_k(ranking: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    if ranking.iter().take(k).any(|b| gt.contains(b)) {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub first_rank: Option<usize>,
    pub rr: f64,
    pub ap: f64,
    pub recall: [f64; 3],
    pub hit: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub mrr: f64,
    pub map: f64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub hit_at_1: f64,
    pub hit_at_5: f64,
    pub hit_at_10: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_latency_ms: Option<f64>,
    #[serde(default)]
    pub per_query: Vec<QueryMetrics>,
}

/// One evaluated query: its id, the full ranking, and the ground truth.
pub struct Outcome<'a> {
    pub query_id: &'a str,
    pub ranking: &'a [String],
    pub gt: &'a BTreeSet<String>,
}

pub fn query_metrics(o: &Outcome) -> Result<QueryMetrics, MetricsError> {
    if o.gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth(o.query_id.to_string()));
    }
    Ok(QueryMetrics {
        query_id: o.query_id.to_string(),
        first_rank: first_relevant_rank(o.ranking, o.gt),
        rr: reciprocal_rank(o.ranking, o.gt),
        ap: average_precision(o.ranking, o.gt),
        recall: CUTOFFS.map(|k| recall_at_k(o.ranking, o.gt, k)),
        hit: CUTOFFS.map(|k| hit_at_k(o.ranking, o.gt, k)),
    })
}

impl MetricsReport {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Result<Self, MetricsError> {
        let per_query = outcomes.iter().map(query_metrics).collect::<Result<Vec<_>, _>>()?;
        Self::from_query_metrics(per_query)
    }

    pub fn from_query_metrics(per_query: Vec<QueryMetrics>) -> Result<Self, MetricsError> {
        if per_query.is_empty() {
            return Err(MetricsError::NoQueries);
        }
        let n = per_query.len() as f64;
        let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            queries: per_query.len(),
            mrr: mean(&|q| q.rr),
            map: mean(&|q| q.ap),
            recall_at_1: mean(&|q| q.recall[0]),
            recall_at_5: mean(&|q| q.recall[1]),
            recall_at_10: mean(&|q| q.recall[2]),
            hit_at_1: mean(&|q| q.hit[0]),
            hit_at_5: mean(&|q| q.hit[1]),
            hit_at_10: mean(&|q| q.hit[2]),
            mean_latency_ms: None,
            per_query,
        })
    }

    /// Field-wise mean of several reports (per-query rows are concatenated).
    pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let n = reports.len() as f64;
        let first = reports.first()?;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let lat: Vec<f64> = reports.iter().filter_map(|r| r.mean_latency_ms).collect();
        Some(MetricsReport {
            queries: first.queries,
            mrr: mean(&|r| r.mrr),
            map: mean(&|r| r.map),
            recall_at_1: mean(&|r| r.recall_at_1),
            recall_at_5: mean(&|r| r.recall_at_5),
            recall_at_10: mean(&|r| r.recall_at_10),
            hit_at_1: mean(&|r| r.hit_at_1),
            hit_at_5: mean(&|r| r.hit_at_5),
            hit_at_10: mean(&|r| r.hit_at_10),
            mean_latency_ms: (lat.len() == reports.len()).then(|| lat.iter().sum::<f64>() / n),
            per_query: reports.iter().flat_map(|r| r.per_query.iter().cloned()).collect(),
        })
    }

    pub fn row(&self) -> [f64; 8] {
        [
            self.mrr,
            self.map,
            self.recall_at_1,
            self.recall_at_5,
            self.recall_at_10,
            self.hit_at_1,
            self.hit_at_5,
            self.hit_at_10,
        ]
    }
}

pub const TABLE_COLUMNS: [&str; 8] = ["MRR", "MAP", "R@1", "R@5", "R@10", "H@1", "H@5", "H@10"];

/// Aligned plain-text table, one row per named report.
pub fn format_table(rows: &[(String, &MetricsReport)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<w$}", "method");
    for c in TABLE_COLUMNS {
        out.push_str(&format!(" {c:>7}"));
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("{name:<w$}"));
        for v in r.row() {
            out.push_str(&format!(" {v:>7.4}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn first_relevant_at_three() {
        assert_eq!(reciprocal_rank(&ids(&["a", "b", "c"]), &set(&["c"])), 1.0 / 3.0);
    }

    #[test]
    fn ap_with_two_relevant() {
        let r = ids(&["a", "g1", "b", "c", "g2"]);
        assert!((average_precision(&r, &set(&["g1", "g2"])) - 0.45).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        let r = ids(&["x", "y", "z"]);
        let g = set(&["x", "y"]);
        assert_eq!(recall_at_k(&r, &g, 5), 1.0);
        assert_eq!(average_precision(&r, &g), 1.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let r = ids(&["x"]);
        let g = BTreeSet::new();
        let o = Outcome {
            query_id: "q",
            ranking: &r,
            gt: &g,
        };
        assert_eq!(query_metrics(&o), Err(MetricsError::EmptyGroundTruth("q".into())));
    }
}
