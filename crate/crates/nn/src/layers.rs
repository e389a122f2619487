// SPDX-License-Identifier: Apache-2.0

//! Parameterized layers built from [`Graph`] primitives.

use crate::{Graph, Init, NnError, ParamId, ParamStore, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// `x · W (+ b)`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, seed: u64) -> Self {
        let weight = store.add(&format!("{name}.weight"), in_dim, out_dim, Init::XavierUniform, seed);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), 1, out_dim, Init::Zeros, seed));
        Affine {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_values(&self) -> usize {
        self.in_dim * self.out_dim + self.bias.map_or(0, |_| self.out_dim)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, seed: u64) -> Self {
        LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), 1, dim, Init::Ones, seed),
            beta: store.add(&format!("{name}.beta"), 1, dim, Init::Zeros, seed),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Single-head GATv2 convolution with edge features.
///
/// For an edge `u → v` the attention logit is
/// `aᵀ · LeakyReLU(W_s h_u + W_t h_v + W_e x_e)`, normalized by softmax over
/// the incoming edges of `v`, and the output is `Σ_u α_uv W_s h_u`. Every
/// node gets a self-loop whose edge feature is zero.
#[derive(Clone, Debug)]
pub struct GatV2 {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    pub w_edge: Option<ParamId>,
    pub attn: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub edge_dim: usize,
}

impl GatV2 {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, edge_dim: usize, seed: u64) -> Self {
        GatV2 {
            w_src: store.add(&format!("{name}.w_src"), in_dim, out_dim, Init::XavierUniform, seed),
            w_dst: store.add(&format!("{name}.w_dst"), in_dim, out_dim, Init::XavierUniform, seed),
            w_edge: (edge_dim > 0)
                .then(|| store.add(&format!("{name}.w_edge"), edge_dim, out_dim, Init::XavierUniform, seed)),
            attn: store.add(&format!("{name}.attn"), out_dim, 1, Init::XavierUniform, seed),
            in_dim,
            out_dim,
            edge_dim,
        }
    }

    /// `h` is `n x in_dim`; `edges` are `(src, dst)` pairs without
    /// self-loops; `edge_feats` is `edges.len() x edge_dim` when the layer
    /// has an edge projection.
    pub fn forward(
        &self,
        g: &mut Graph,
        h: Var,
        edges: &[(usize, usize)],
        edge_feats: Option<Var>,
    ) -> Result<Var, NnError> {
        let [n, d] = g.value(h).shape();
        if d != self.in_dim {
            return Err(NnError::Shape(format!(
                "GATv2 expects {} input features, got {d}",
                self.in_dim
            )));
        }
        if let Some(&(s, t)) = edges.iter().find(|&&(s, t)| s >= n || t >= n) {
            return Err(NnError::Shape(format!("edge {s}->{t} outside a {n}-node graph")));
        }
        let m = edges.len();
        let mut src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let mut dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        src.extend(0..n);
        dst.extend(0..n);

        let ws = g.param(self.w_src);
        let wt = g.param(self.w_dst);
        let s = g.matmul(h, ws)?;
        let t = g.matmul(h, wt)?;
        let zs = g.gather_rows(s, &src)?;
        let zt = g.gather_rows(t, &dst)?;
        let mut z = g.add(zs, zt)?;
        match (self.w_edge, edge_feats) {
            (Some(we), Some(x)) => {
                let shape = g.value(x).shape();
                if shape != [m, self.edge_dim] {
                    return Err(NnError::Shape(format!(
                        "edge features {}x{}, expected {m}x{}",
                        shape[0], shape[1], self.edge_dim
                    )));
                }
                let we = g.param(we);
                let e = g.matmul(x, we)?;
                // zero rows for the appended self-loops
                let idx: Vec<usize> = (0..m).collect();
                let e = g.segment_sum(e, &idx, m + n)?;
                z = g.add(z, e)?;
            }
            (None, None) => {}
            (Some(_), None) if m == 0 => {}
            _ => return Err(NnError::Shape("edge features do not match the layer's edge_dim".into())),
        }
        let act = g.leaky_relu(z, LEAKY_SLOPE);
        let a = g.param(self.attn);
        let logits = g.matmul(act, a)?;
        let alpha = g.segment_softmax(logits, &dst, n)?;
        let msg = g.mul_col(zs, alpha)?;
        g.segment_sum(msg, &dst, n)
    }

    pub fn num_values(&self) -> usize {
        2 * self.in_dim * self.out_dim + self.edge_dim * self.out_dim + self.out_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Mode, Tensor};

    #[test]
    fn single_node_without_edges_is_source_projection() {
        let mut store = ParamStore::new();
        let layer = GatV2::new(&mut store, "gat", 3, 2, 0, 7);
        let h = Tensor::row_vector(&[0.5, -1.0, 2.0]);
        let want = h.matmul(store.value(layer.w_src)).unwrap();
        let mut g = Graph::new(&store, Mode::Eval, 0);
        let x = g.input(h);
        let y = layer.forward(&mut g, x, &[], None).unwrap();
        for (a, b) in g.value(y).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut store = ParamStore::new();
        let layer = GatV2::new(&mut store, "gat", 3, 2, 4, 7);
        let mut g = Graph::new(&store, Mode::Eval, 0);
        let x = g.input(Tensor::zeros(2, 5));
        assert!(matches!(layer.forward(&mut g, x, &[], None), Err(NnError::Shape(_))));
        let x = g.input(Tensor::zeros(2, 3));
        let ef = g.input(Tensor::zeros(1, 3));
        assert!(layer.forward(&mut g, x, &[(0, 1)], Some(ef)).is_err());
        assert!(layer.forward(&mut g, x, &[(0, 5)], None).is_err());
    }
}
