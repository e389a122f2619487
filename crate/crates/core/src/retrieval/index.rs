// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoders::{fuse_score, BlockEmbeddings, EncoderError, EvidenceVector, Models, PreparedSnapshot};
use crate::sv::Snapshot;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("index was built with {found}-dim embeddings, models expect {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Embeddings of every block of one snapshot under all three experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotIndex {
    pub snapshot_id: String,
    pub block_ids: Vec<String>,
    pub embeddings: BlockEmbeddings,
}

pub fn build_index(snapshot: &Snapshot, models: &Models) -> Result<SnapshotIndex, IndexError> {
    build_index_prepared(&PreparedSnapshot::new(snapshot, &models.config), models)
}

pub fn build_index_prepared(p: &PreparedSnapshot, models: &Models) -> Result<SnapshotIndex, IndexError> {
    Ok(SnapshotIndex {
        snapshot_id: p.snapshot_id.clone(),
        block_ids: p.block_ids.clone(),
        embeddings: models.embed_snapshot(p)?,
    })
}

impl SnapshotIndex {
    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }

    pub fn check(&self, models: &Models) -> Result<(), IndexError> {
        let e = &self.embeddings;
        let dims = [
            (e.text.first().map(Vec::len), models.config.dim),
            (e.local.first().map(Vec::len), models.config.dim),
            (e.global.first().map(Vec::len), models.config.proj_dim),
        ];
        for (found, expected) in dims {
            if let Some(found) = found {
                if found != expected {
                    return Err(IndexError::DimensionMismatch { expected, found });
                }
            }
        }
        Ok(())
    }

    /// Exactly `n` entries taken cyclically from `parts`; repeated entries
    /// get a `#round` suffix so ids stay unique.
    pub fn tiled(parts: &[SnapshotIndex], n: usize) -> Result<SnapshotIndex, IndexError> {
        let pool: Vec<(&SnapshotIndex, usize)> = parts.iter().flat_map(|p| (0..p.len()).map(move |i| (p, i))).collect();
        if pool.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let mut out = SnapshotIndex {
            snapshot_id: format!("tiled-{n}"),
            block_ids: Vec::with_capacity(n),
            embeddings: BlockEmbeddings {
                text: Vec::with_capacity(n),
                local: Vec::with_capacity(n),
                global: Vec::with_capacity(n),
            },
        };
        for k in 0..n {
            let (p, i) = pool[k % pool.len()];
            let round = k / pool.len();
            out.block_ids.push(match round {
                0 => p.block_ids[i].clone(),
                r => format!("{}#{r}", p.block_ids[i]),
            });
            out.embeddings.text.push(p.embeddings.text[i].clone());
            out.embeddings.local.push(p.embeddings.local[i].clone());
            out.embeddings.global.push(p.embeddings.global[i].clone());
        }
        Ok(out)
    }
}

/// Query-side vectors, computed once per query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryVectors {
    pub text: Vec<f64>,
    pub global: Vec<f64>,
    pub alpha: [f64; 3],
}

pub fn encode_query(query: &str, models: &Models) -> Result<QueryVectors, EncoderError> {
    let text = models.text.embed(query)?;
    let global = models.glide.embed_queries(std::slice::from_ref(&text))?.remove(0);
    let alpha = models.router.route(&text)?;
    Ok(QueryVectors { text, global, alpha })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub block_id: String,
    pub score: f64,
    pub evidence: EvidenceVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub alpha: [f64; 3],
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn ranking(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.block_id.clone()).collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn evidence(q: &QueryVectors, index: &SnapshotIndex) -> Vec<EvidenceVector> {
    let e = &index.embeddings;
    (0..index.len())
        .map(|i| EvidenceVector {
            s_txt: dot(&q.text, &e.text[i]),
            s_loc: dot(&q.text, &e.local[i]),
            s_glob: dot(&q.global, &e.global[i]),
        })
        .collect()
}

/// Per-query min–max rescaling of each evidence column to [0, 1].
pub fn minmax(ev: &mut [EvidenceVector]) {
    let cols: [fn(&mut EvidenceVector) -> &mut f64; 3] = [|v| &mut v.s_txt, |v| &mut v.s_loc, |v| &mut v.s_glob];
    for get in cols {
        let (lo, hi) = ev.iter_mut().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let x = *get(v);
            (lo.min(x), hi.max(x))
        });
        let span = hi - lo;
        for v in ev.iter_mut() {
            let x = get(v);
            *x = if span > 0.0 { (*x - lo) / span } else { 0.0 };
        }
    }
}

/// Descending score, ties by ascending block id.
pub fn order(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(&ids[b]),
        o => o,
    });
    idx
}

/// Scores every candidate with the given mixing weights.
pub fn rank_with(
    query_id: &str,
    q: &QueryVectors,
    alpha: [f64; 3],
    index: &SnapshotIndex,
    rescale: bool,
) -> RankedResult {
    let mut ev = evidence(q, index);
    if rescale {
        minmax(&mut ev);
    }
    let scores: Vec<f64> = ev.iter().map(|v| fuse_score(&alpha, v)).collect();
    let entries = order(&index.block_ids, &scores)
        .into_iter()
        .map(|i| RankedEntry {
            block_id: index.block_ids[i].clone(),
            score: scores[i],
            evidence: ev[i],
        })
        .collect();
    RankedResult {
        query_id: query_id.to_string(),
        alpha,
        entries,
    }
}

/// Encodes the query once, routes once, and ranks all candidates.
pub fn rank(query_id: &str, query: &str, index: &SnapshotIndex, models: &Models) -> Result<RankedResult, IndexError> {
    if index.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let q = encode_query(query, models)?;
    Ok(rank_with(query_id, &q, q.alpha, index, models.config.minmax_evidence))
}
