// SPDX-License-Identifier: Apache-2.0

use rtloc_nn::{Affine, GatV2, Graph, Init, Mode, ParamId, ParamStore, Tensor, Var};

use super::text::rows_of;
use super::{EncoderError, ModelConfig};
use crate::graph::normalize_bitwidth;
use crate::graph::BlockDfg;

/// Gated message passing over block DFGs with mean pooling.
#[derive(Clone, Debug)]
pub struct LocalEncoder {
    pub store: ParamStore,
    pub name_table: ParamId,
    pub category_table: ParamId,
    pub operator_table: ParamId,
    /// Row 0 scales the normalized width; row 1 is the default for unknown widths.
    pub width_table: ParamId,
    pub role_table: ParamId,
    pub timing_table: ParamId,
    pub layers: Vec<GatV2>,
    pub proj: Affine,
    pub name_vocab: usize,
    pub width_cap: u32,
    pub dropout: f64,
}

pub const CATEGORIES: usize = 5;
pub const OPERATORS: usize = 8;
pub const ROLES: usize = 5;
pub const TIMINGS: usize = 2;

impl LocalEncoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let x = Init::XavierUniform;
        let name_table = store.add("local.name", cfg.name_vocab, cfg.name_dim, x, seed);
        let category_table = store.add("local.category", CATEGORIES, cfg.category_dim, x, seed);
        let operator_table = store.add("local.operator", OPERATORS, cfg.operator_dim, x, seed);
        let width_table = store.add("local.width", 2, cfg.width_dim, x, seed);
        let role_table = store.add("local.role", ROLES, cfg.role_dim, x, seed);
        let timing_table = store.add("local.timing", TIMINGS, cfg.timing_dim, x, seed);
        let d_in = cfg.name_dim + cfg.category_dim + cfg.operator_dim + cfg.width_dim;
        let d_e = cfg.role_dim + cfg.timing_dim;
        let layers = (0..cfg.local_layers)
            .map(|l| {
                let din = if l == 0 { d_in } else { cfg.local_hidden };
                GatV2::new(&mut store, &format!("local.gat{l}"), din, cfg.local_hidden, d_e, seed)
            })
            .collect();
        let proj = Affine::new(&mut store, "local.proj", cfg.local_hidden, cfg.dim, false, seed);
        LocalEncoder {
            store,
            name_table,
            category_table,
            operator_table,
            width_table,
            role_table,
            timing_table,
            layers,
            proj,
            name_vocab: cfg.name_vocab,
            width_cap: cfg.width_cap,
            dropout: cfg.dropout,
        }
    }

    /// Encodes several DFGs as one disjoint union; `dfgs.len() x dim`, unit rows.
    pub fn forward(&self, g: &mut Graph, dfgs: &[&BlockDfg]) -> Result<Var, EncoderError> {
        let mut names = Vec::new();
        let mut cats = Vec::new();
        let mut ops = Vec::new();
        let mut widths = Vec::new();
        let mut missing = Vec::new();
        let mut member = Vec::new();
        let mut edges = Vec::new();
        let mut roles = Vec::new();
        let mut timings = Vec::new();
        for (k, d) in dfgs.iter().enumerate() {
            if d.nodes.is_empty() {
                return Err(EncoderError::EmptyGraph(d.block_id.clone()));
            }
            let off = names.len();
            for n in &d.nodes {
                names.push((n.hashed_name % self.name_vocab as u64) as usize);
                cats.push(n.category.index());
                ops.push(n.operator_type.index());
                match n.bit_width {
                    Some(w) if w >= 1 => {
                        widths.push(normalize_bitwidth(w, self.width_cap).unwrap_or(1.0));
                        missing.push(0.0);
                    }
                    _ => {
                        widths.push(0.0);
                        missing.push(1.0);
                    }
                }
                member.push(k);
            }
            for e in &d.edges {
                edges.push((off + e.src, off + e.dst));
                roles.push(e.role.index());
                timings.push(e.timing.index());
            }
        }
        let n = names.len();
        let name = g.gather(self.name_table, &names)?;
        let cat = g.gather(self.category_table, &cats)?;
        let op = g.gather(self.operator_table, &ops)?;
        let scale = g.gather(self.width_table, &vec![0; n])?;
        let default = g.gather(self.width_table, &vec![1; n])?;
        let wcol = g.input(Tensor::col_vector(&widths));
        let mcol = g.input(Tensor::col_vector(&missing));
        let known = g.mul_col(scale, wcol)?;
        let unknown = g.mul_col(default, mcol)?;
        let width = g.add(known, unknown)?;
        let mut h = g.concat_cols(&[name, cat, op, width])?;
        let ef = if edges.is_empty() {
            None
        } else {
            let r = g.gather(self.role_table, &roles)?;
            let t = g.gather(self.timing_table, &timings)?;
            Some(g.concat_cols(&[r, t])?)
        };
        for layer in &self.layers {
            let x = g.dropout(h, self.dropout)?;
            let y = layer.forward(g, x, &edges, ef)?;
            h = g.leaky_relu(y, 0.2);
        }
        let pooled = g.segment_mean(h, &member, dfgs.len())?;
        let y = self.proj.forward(g, pooled)?;
        Ok(g.l2_normalize_rows(y)?)
    }

    pub fn embed_batch(&self, dfgs: &[&BlockDfg]) -> Result<Vec<Vec<f64>>, EncoderError> {
        if dfgs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.store, Mode::Eval, 0);
        let v = self.forward(&mut g, dfgs)?;
        Ok(rows_of(g.value(v)))
    }

    pub fn embed(&self, dfg: &BlockDfg) -> Result<Vec<f64>, EncoderError> {
        Ok(self.embed_batch(&[dfg])?.remove(0))
    }
}
