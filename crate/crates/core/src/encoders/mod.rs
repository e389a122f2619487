// SPDX-License-Identifier: Apache-2.0

//! The three retrieval experts, the router that mixes them, and the
//! per-snapshot inputs they consume.

pub mod glide;
pub mod local;
pub mod router;
pub mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use glide::Glide;
pub use local::LocalEncoder;
pub use router::Router;
pub use text::{ngram_buckets, TextEncoder};

use crate::graph::{build_block_dfg, BlockDfg, Category, DfgNode, NodeKind, OperatorType};
use crate::graph::{build_dtg, fnv1a64};
use crate::sv::{Decl, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("empty text")]
    EmptyText,
    #[error("empty graph for {0}")]
    EmptyGraph(String),
    #[error("missing embedding: {0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Nn(rtloc_nn::NnError),
}

/// Architecture sizes. Defaults follow the reference configuration; every
/// field can be overridden from the JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub text_vocab: usize,
    pub name_vocab: usize,
    pub width_cap: u32,
    pub name_dim: usize,
    pub category_dim: usize,
    pub operator_dim: usize,
    pub width_dim: usize,
    pub role_dim: usize,
    pub timing_dim: usize,
    pub local_hidden: usize,
    pub local_layers: usize,
    pub glide_hidden: usize,
    pub glide_layers: usize,
    pub edge_dim: usize,
    pub proj_dim: usize,
    pub router_hidden: usize,
    pub dropout: f64,
    pub router_dropout: f64,
    pub tau_text: f64,
    pub tau_local: f64,
    pub tau_glide: f64,
    /// Rescale each expert's similarities to [0, 1] per query before fusing.
    pub minmax_evidence: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 384,
            text_vocab: 16384,
            name_vocab: crate::graph::DEFAULT_VOCAB as usize,
            width_cap: crate::graph::DEFAULT_WIDTH_CAP,
            name_dim: 32,
            category_dim: 8,
            operator_dim: 8,
            width_dim: 8,
            role_dim: 8,
            timing_dim: 4,
            local_hidden: 128,
            local_layers: 3,
            glide_hidden: 256,
            glide_layers: 2,
            edge_dim: 32,
            proj_dim: 128,
            router_hidden: 128,
            dropout: 0.3,
            router_dropout: 0.3,
            tau_text: 0.05,
            tau_local: 0.07,
            tau_glide: 0.07,
            minmax_evidence: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expert {
    Text,
    Local,
    Glide,
}

impl Expert {
    pub const ALL: [Expert; 3] = [Expert::Text, Expert::Local, Expert::Glide];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn basis(self) -> [f64; 3] {
        let mut a = [0.0; 3];
        a[self.index()] = 1.0;
        a
    }
}

/// Cosine similarities of one candidate under each expert.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector {
    pub s_txt: f64,
    pub s_loc: f64,
    pub s_glob: f64,
}

impl EvidenceVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.s_txt, self.s_loc, self.s_glob]
    }
}

pub fn fuse_score(alpha: &[f64; 3], v: &EvidenceVector) -> f64 {
    alpha[0] * v.s_txt + alpha[1] * v.s_loc + alpha[2] * v.s_glob
}

/// Everything the encoders read from one snapshot, in block order.
#[derive(Clone, Debug)]
pub struct PreparedSnapshot {
    pub snapshot_id: String,
    pub block_ids: Vec<String>,
    pub texts: Vec<String>,
    pub dfgs: Vec<BlockDfg>,
    pub edges: Vec<(usize, usize)>,
    pub edge_types: Vec<usize>,
    pub position: BTreeMap<String, usize>,
}

impl PreparedSnapshot {
    pub fn new(snapshot: &Snapshot, cfg: &ModelConfig) -> Self {
        let empty = BTreeMap::<String, Decl>::new();
        let vocab = cfg.name_vocab as u64;
        let dfgs = crate::par::map(&snapshot.blocks, |b| {
            let decls = snapshot.module(&b.module_name).map_or(&empty, |m| &m.decls);
            let mut d = build_block_dfg(b, decls, vocab);
            if d.nodes.is_empty() {
                // blocks with no signals still need a graph to embed
                d.nodes.push(DfgNode {
                    node_id: 0,
                    kind: NodeKind::Signal,
                    category: Category::Constant,
                    operator_type: OperatorType::None,
                    bit_width: None,
                    hashed_name: fnv1a64(b"") % vocab,
                    label: String::new(),
                });
            }
            d
        });
        let dtg = build_dtg(snapshot);
        let mut edges = Vec::with_capacity(dtg.edges.len());
        let mut edge_types = Vec::with_capacity(dtg.edges.len());
        for (u, v, role, timing) in dtg.indexed_edges() {
            edges.push((u, v));
            edge_types.push(glide::edge_type(role, timing));
        }
        PreparedSnapshot {
            snapshot_id: snapshot.snapshot_id.clone(),
            block_ids: snapshot.blocks.iter().map(|b| b.block_id.clone()).collect(),
            texts: snapshot.blocks.iter().map(|b| b.text.clone()).collect(),
            dfgs,
            edges,
            edge_types,
            position: snapshot
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| (b.block_id.clone(), i))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }
}

/// Per-block embeddings of one snapshot under all three experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEmbeddings {
    pub text: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
    pub global: Vec<Vec<f64>>,
}

const CHUNK: usize = 64;

/// The trained experts and router.
#[derive(Clone, Debug)]
pub struct Models {
    pub config: ModelConfig,
    pub text: TextEncoder,
    pub local: LocalEncoder,
    pub glide: Glide,
    pub router: Router,
}

impl Models {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        Models {
            text: TextEncoder::new(&config, seed),
            local: LocalEncoder::new(&config, seed),
            glide: Glide::new(&config, seed),
            router: Router::new(&config, seed),
            config,
        }
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EncoderError> {
        let chunks: Vec<&[String]> = texts.chunks(CHUNK).collect();
        let parts = crate::par::map(&chunks, |c| self.text.embed_batch(c));
        let mut out = Vec::with_capacity(texts.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn embed_dfgs(&self, dfgs: &[BlockDfg]) -> Result<Vec<Vec<f64>>, EncoderError> {
        let chunks: Vec<Vec<&BlockDfg>> = dfgs.chunks(CHUNK).map(|c| c.iter().collect()).collect();
        let parts = crate::par::map(&chunks, |c| self.local.embed_batch(c));
        let mut out = Vec::with_capacity(dfgs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn embed_snapshot(&self, p: &PreparedSnapshot) -> Result<BlockEmbeddings, EncoderError> {
        let text = self.embed_texts(&p.texts)?;
        let local = self.embed_dfgs(&p.dfgs)?;
        let global = self.glide.embed_blocks(&text, &local, &p.edges, &p.edge_types)?;
        Ok(BlockEmbeddings { text, local, global })
    }

    pub fn num_params(&self) -> ParamCounts {
        ParamCounts {
            text: self.text.store.num_values(),
            local: self.local.store.num_values(),
            glide: self.glide.store.num_values(),
            router: self.router.store.num_values(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub text: usize,
    pub local: usize,
    pub glide: usize,
    pub router: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.text + self.local + self.glide + self.router
    }
}
