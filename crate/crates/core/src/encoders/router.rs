// SPDX-License-Identifier: Apache-2.0

use rtloc_nn::{Affine, Graph, Mode, ParamStore, Tensor, Var};

use super::{EncoderError, ModelConfig};

/// Per-query weights over the three experts.
#[derive(Clone, Debug)]
pub struct Router {
    pub store: ParamStore,
    pub hidden: Affine,
    pub out: Affine,
    pub dropout: f64,
}

impl Router {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let hidden = Affine::new(&mut store, "router.hidden", cfg.dim, cfg.router_hidden, true, seed);
        let out = Affine::new(&mut store, "router.out", cfg.router_hidden, 3, true, seed);
        Router {
            store,
            hidden,
            out,
            dropout: cfg.router_dropout,
        }
    }

    /// `q` is `k x dim`; returns `k x 3` simplex rows.
    pub fn forward(&self, g: &mut Graph, q: Var) -> Result<Var, EncoderError> {
        let h = self.hidden.forward(g, q)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout)?;
        let logits = self.out.forward(g, h)?;
        Ok(g.softmax_rows(logits))
    }

    pub fn route(&self, q: &[f64]) -> Result<[f64; 3], EncoderError> {
        let mut g = Graph::new(&self.store, Mode::Eval, 0);
        let x = g.input(Tensor::row_vector(q));
        let a = self.forward(&mut g, x)?;
        let r = g.value(a).row(0);
        Ok([r[0], r[1], r[2]])
    }
}
