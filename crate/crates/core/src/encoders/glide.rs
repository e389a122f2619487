// SPDX-License-Identifier: Apache-2.0

use rtloc_nn::{Affine, GatV2, Graph, Init, LayerNorm, Mode, ParamId, ParamStore, Tensor, Var};

use super::text::rows_of;
use super::{EncoderError, ModelConfig};
use crate::graph::{Role, Timing};

/// Number of (role, timing) edge types.
pub const EDGE_TYPES: usize = Role::ALL.len() * 2;

pub fn edge_type(role: Role, timing: Timing) -> usize {
    role.index() * 2 + timing.index()
}

/// Query-agnostic propagation over the design topology graph. Block inputs
/// are the concatenated text and local embeddings.
#[derive(Clone, Debug)]
pub struct Glide {
    pub store: ParamStore,
    pub input: Affine,
    pub edge_table: ParamId,
    pub layers: Vec<(GatV2, LayerNorm)>,
    pub phi_g: Affine,
    pub phi_q: Affine,
    pub dropout: f64,
    pub in_dim: usize,
}

impl Glide {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let in_dim = 2 * cfg.dim;
        let input = Affine::new(&mut store, "glide.input", in_dim, cfg.glide_hidden, true, seed);
        let edge_table = store.add("glide.edge", EDGE_TYPES, cfg.edge_dim, Init::XavierUniform, seed);
        let layers = (0..cfg.glide_layers)
            .map(|l| {
                (
                    GatV2::new(
                        &mut store,
                        &format!("glide.gat{l}"),
                        cfg.glide_hidden,
                        cfg.glide_hidden,
                        cfg.edge_dim,
                        seed,
                    ),
                    LayerNorm::new(&mut store, &format!("glide.ln{l}"), cfg.glide_hidden, seed),
                )
            })
            .collect();
        let phi_g = Affine::new(&mut store, "glide.phi_g", cfg.glide_hidden, cfg.proj_dim, true, seed);
        let phi_q = Affine::new(&mut store, "glide.phi_q", cfg.dim, cfg.proj_dim, true, seed);
        Glide {
            store,
            input,
            edge_table,
            layers,
            phi_g,
            phi_q,
            dropout: cfg.dropout,
            in_dim,
        }
    }

    /// `x` is `n x 2·dim`; returns `n x proj_dim` unit rows.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        edges: &[(usize, usize)],
        types: &[usize],
    ) -> Result<Var, EncoderError> {
        let mut h = self.input.forward(g, x)?;
        let ef = if edges.is_empty() {
            None
        } else {
            Some(g.gather(self.edge_table, types)?)
        };
        for (gat, ln) in &self.layers {
            let inp = g.dropout(h, self.dropout)?;
            let a = gat.forward(g, inp, edges, ef)?;
            let a = g.leaky_relu(a, 0.2);
            let r = g.add(h, a)?;
            h = ln.forward(g, r)?;
        }
        let y = self.phi_g.forward(g, h)?;
        Ok(g.l2_normalize_rows(y)?)
    }

    pub fn project_query(&self, g: &mut Graph, q: Var) -> Result<Var, EncoderError> {
        let y = self.phi_q.forward(g, q)?;
        Ok(g.l2_normalize_rows(y)?)
    }

    /// One eval-mode pass over a whole snapshot.
    pub fn embed_blocks(
        &self,
        text: &[Vec<f64>],
        local: &[Vec<f64>],
        edges: &[(usize, usize)],
        types: &[usize],
    ) -> Result<Vec<Vec<f64>>, EncoderError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let x = concat_inputs(text, local, self.in_dim)?;
        let mut g = Graph::new(&self.store, Mode::Eval, 0);
        let x = g.input(x);
        let v = self.forward(&mut g, x, edges, types)?;
        Ok(rows_of(g.value(v)))
    }

    pub fn embed_queries(&self, q: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EncoderError> {
        if q.is_empty() {
            return Ok(Vec::new());
        }
        let t = Tensor::from_rows(q)?;
        let mut g = Graph::new(&self.store, Mode::Eval, 0);
        let x = g.input(t);
        let v = self.project_query(&mut g, x)?;
        Ok(rows_of(g.value(v)))
    }
}

/// Row-wise `text ‖ local`.
pub fn concat_inputs(text: &[Vec<f64>], local: &[Vec<f64>], width: usize) -> Result<Tensor, EncoderError> {
    if text.len() != local.len() {
        return Err(EncoderError::MissingEmbedding(format!(
            "{} text rows vs {} local rows",
            text.len(),
            local.len()
        )));
    }
    let mut data = Vec::with_capacity(text.len() * width);
    for (a, b) in text.iter().zip(local) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Ok(Tensor::from_vec(text.len(), width, data)?)
}
