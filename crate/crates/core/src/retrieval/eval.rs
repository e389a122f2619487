// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bm25::{Bm25Index, Bm25Params};
use super::index::{build_index_prepared, encode_query, order, rank_with, IndexError, SnapshotIndex};
use super::metrics::{MetricsError, MetricsReport, Outcome};
use crate::corpus::{ChangeInstance, Dataset};
use crate::encoders::{Expert, Models, PreparedSnapshot};
use crate::graph::build_dtg;
use crate::sv::{anonymize_snapshot, Snapshot, SvError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sv(#[from] SvError),
    #[error("unknown snapshot {0}")]
    MissingSnapshot(String),
    #[error("unknown method {0}")]
    UnknownMethod(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fused,
    Text,
    Local,
    Glide,
    Bm25,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Fused, Method::Text, Method::Local, Method::Glide, Method::Bm25];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fused => "fused",
            Method::Text => "text",
            Method::Local => "local",
            Method::Glide => "glide",
            Method::Bm25 => "bm25",
        }
    }

    pub fn expert(self) -> Option<Expert> {
        match self {
            Method::Text => Some(Expert::Text),
            Method::Local => Some(Expert::Local),
            Method::Glide => Some(Expert::Glide),
            _ => None,
        }
    }

    fn neural(self) -> bool {
        self != Method::Bm25
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

/// One query to evaluate against one snapshot.
#[derive(Clone, Debug)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
    pub gt: BTreeSet<String>,
    pub snapshot_id: String,
    pub family: Option<String>,
}

impl EvalQuery {
    pub fn from_instance(i: &ChangeInstance) -> Self {
        EvalQuery {
            id: i.instance_id.clone(),
            text: i.query_text(),
            gt: i.affected_block_ids.clone(),
            snapshot_id: i.snapshot_id.clone(),
            family: i.family.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub family: Option<String>,
    pub alpha: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub reports: BTreeMap<Method, MetricsReport>,
    pub queries: Vec<QueryRecord>,
}

/// Mean router weights and per-method MRR over the queries of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub queries: usize,
    pub mean_alpha: [f64; 3],
    pub mrr: BTreeMap<Method, f64>,
}

impl EvalRun {
    /// Queries without a family are left out.
    pub fn by_family(&self) -> BTreeMap<String, FamilySummary> {
        let mut groups: BTreeMap<&str, Vec<&QueryRecord>> = BTreeMap::new();
        for q in &self.queries {
            if let Some(f) = &q.family {
                groups.entry(f).or_default().push(q);
            }
        }
        groups
            .into_iter()
            .map(|(f, qs)| {
                let n = qs.len() as f64;
                let mut mean_alpha = [0.0; 3];
                for q in &qs {
                    for (m, a) in mean_alpha.iter_mut().zip(q.alpha) {
                        *m += a / n;
                    }
                }
                let ids: BTreeSet<&str> = qs.iter().map(|q| q.id.as_str()).collect();
                let mrr = self
                    .reports
                    .iter()
                    .map(|(m, r)| {
                        let rr: f64 = r
                            .per_query
                            .iter()
                            .filter(|p| ids.contains(p.query_id.as_str()))
                            .map(|p| p.rr)
                            .sum();
                        (*m, rr / n)
                    })
                    .collect();
                (
                    f.to_string(),
                    FamilySummary {
                        queries: qs.len(),
                        mean_alpha,
                        mrr,
                    },
                )
            })
            .collect()
    }
}

struct Candidates {
    index: Option<SnapshotIndex>,
    bm25: Option<Bm25Index>,
}

fn candidates(snapshot: &Snapshot, models: &Models, methods: &[Method]) -> Result<Candidates, EvalError> {
    let index = if methods.iter().any(|m| m.neural()) {
        let p = PreparedSnapshot::new(snapshot, &models.config);
        Some(build_index_prepared(&p, models)?)
    } else {
        None
    };
    let bm25 = methods.contains(&Method::Bm25).then(|| {
        let texts: Vec<&str> = snapshot.blocks.iter().map(|b| b.text.as_str()).collect();
        Bm25Index::new(&texts, Bm25Params::default())
    });
    Ok(Candidates { index, bm25 })
}

/// Ranks every query under every method against its own snapshot.
pub fn evaluate_queries(
    snapshots: &BTreeMap<String, Snapshot>,
    queries: &[EvalQuery],
    models: &Models,
    methods: &[Method],
) -> Result<EvalRun, EvalError> {
    let wanted: BTreeSet<&str> = queries.iter().map(|q| q.snapshot_id.as_str()).collect();
    let mut cands = BTreeMap::new();
    for id in wanted {
        let s = snapshots
            .get(id)
            .ok_or_else(|| EvalError::MissingSnapshot(id.to_string()))?;
        cands.insert(id.to_string(), candidates(s, models, methods)?);
    }
    let rescale = models.config.minmax_evidence;
    let per_query = crate::par::map(queries, |q| -> Result<(Vec<Vec<String>>, [f64; 3]), EvalError> {
        let c = &cands[&q.snapshot_id];
        let qv = if methods.iter().any(|m| m.neural()) {
            Some(encode_query(&q.text, models).map_err(IndexError::from)?)
        } else {
            None
        };
        let mut rankings = Vec::with_capacity(methods.len());
        for m in methods {
            let ranking = match (m, &qv, &c.index, &c.bm25) {
                (Method::Bm25, _, _, Some(b)) => {
                    let ids: Vec<String> = snapshots[&q.snapshot_id]
                        .blocks
                        .iter()
                        .map(|b| b.block_id.clone())
                        .collect();
                    let s = b.scores(&q.text);
                    order(&ids, &s).into_iter().map(|i| ids[i].clone()).collect()
                }
                (m, Some(qv), Some(idx), _) => {
                    let alpha = m.expert().map_or(qv.alpha, Expert::basis);
                    rank_with(&q.id, qv, alpha, idx, rescale).ranking()
                }
                _ => unreachable!("candidates built for every requested method"),
            };
            rankings.push(ranking);
        }
        Ok((rankings, qv.map_or([0.0; 3], |v| v.alpha)))
    });
    let per_query = per_query.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut reports = BTreeMap::new();
    for (k, m) in methods.iter().enumerate() {
        let outcomes: Vec<Outcome> = queries
            .iter()
            .zip(&per_query)
            .map(|(q, (r, _))| Outcome {
                query_id: &q.id,
                ranking: &r[k],
                gt: &q.gt,
            })
            .collect();
        reports.insert(*m, MetricsReport::from_outcomes(&outcomes)?);
    }
    let queries = queries
        .iter()
        .zip(&per_query)
        .map(|(q, (_, a))| QueryRecord {
            id: q.id.clone(),
            family: q.family.clone(),
            alpha: *a,
        })
        .collect();
    Ok(EvalRun { reports, queries })
}

pub fn evaluate(
    ds: &Dataset,
    instances: &[&ChangeInstance],
    models: &Models,
    methods: &[Method],
) -> Result<EvalRun, EvalError> {
    let queries: Vec<EvalQuery> = instances.iter().map(|i| EvalQuery::from_instance(i)).collect();
    evaluate_queries(&ds.snapshots, &queries, models, methods)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub original: BTreeMap<Method, MetricsReport>,
    pub masked: BTreeMap<Method, MetricsReport>,
    /// Original minus masked MRR per method.
    pub mrr_drop: BTreeMap<Method, f64>,
    pub map_drop: BTreeMap<Method, f64>,
    /// Whether every snapshot's DTG kept the same edges between the same
    /// block positions, roles and timings.
    pub dtg_preserved: bool,
}

/// Same queries, same weights, against anonymized copies of the
/// candidate snapshots. Ground truth follows blocks by position.
pub fn robustness_eval(
    ds: &Dataset,
    instances: &[&ChangeInstance],
    models: &Models,
    methods: &[Method],
) -> Result<RobustnessReport, EvalError> {
    let queries: Vec<EvalQuery> = instances.iter().map(|i| EvalQuery::from_instance(i)).collect();
    let wanted: BTreeSet<&str> = queries.iter().map(|q| q.snapshot_id.as_str()).collect();
    let mut masked_snaps = BTreeMap::new();
    let mut id_maps: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut dtg_preserved = true;
    for id in wanted {
        let s = ds
            .snapshots
            .get(id)
            .ok_or_else(|| EvalError::MissingSnapshot(id.to_string()))?;
        let (m, _) = anonymize_snapshot(s)?;
        let map: BTreeMap<String, String> = s
            .blocks
            .iter()
            .zip(&m.blocks)
            .map(|(a, b)| (a.block_id.clone(), b.block_id.clone()))
            .collect();
        dtg_preserved &= m.blocks.len() == s.blocks.len() && dtg_shape(s) == dtg_shape(&m);
        id_maps.insert(id.to_string(), map);
        masked_snaps.insert(id.to_string(), m);
    }
    let masked_queries: Vec<EvalQuery> = queries
        .iter()
        .map(|q| {
            let map = &id_maps[&q.snapshot_id];
            EvalQuery {
                gt: q
                    .gt
                    .iter()
                    .map(|b| map.get(b).cloned().unwrap_or_else(|| b.clone()))
                    .collect(),
                ..q.clone()
            }
        })
        .collect();
    let original = evaluate_queries(&ds.snapshots, &queries, models, methods)?.reports;
    let masked = evaluate_queries(&masked_snaps, &masked_queries, models, methods)?.reports;
    let mrr_drop = methods.iter().map(|m| (*m, original[m].mrr - masked[m].mrr)).collect();
    let map_drop = methods.iter().map(|m| (*m, original[m].map - masked[m].map)).collect();
    Ok(RobustnessReport {
        original,
        masked,
        mrr_drop,
        map_drop,
        dtg_preserved,
    })
}

/// DTG edges as sorted (src position, dst position, role, timing) tuples.
pub fn dtg_shape(s: &Snapshot) -> Vec<(usize, usize, crate::graph::Role, crate::graph::Timing)> {
    let mut v = build_dtg(s).indexed_edges();
    v.sort();
    v
}
