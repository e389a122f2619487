// SPDX-License-Identifier: Apache-2.0

//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] and never copied onto the tape; embedding
//! lookups produce sparse row gradients so large tables stay cheap.
//! [`Graph::backward`] walks the tape once in reverse and returns [`Grads`]
//! keyed by parameter.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{NnError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: ParamId,
        rows: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    SegmentSum {
        x: Var,
        seg: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
    },
    SegmentSoftmax {
        x: Var,
        seg: Vec<usize>,
        n: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    L2NormRows {
        x: Var,
        norms: Vec<f64>,
    },
    SoftmaxRows(Var),
    RowDot(Var, Var),
    Sum(Var),
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    SegmentCrossEntropy {
        scores: Var,
        seg: Vec<usize>,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    MarginRank {
        pos: Var,
        neg: Var,
        gamma: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
}

/// Gradient of one parameter: dense, or a sparse set of touched rows.
#[derive(Clone, Debug, PartialEq)]
pub enum GradBuf {
    Dense(Tensor),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl GradBuf {
    /// Materializes the gradient as a dense tensor of the given shape.
    pub fn to_dense(&self, rows: usize, cols: usize) -> Tensor {
        match self {
            GradBuf::Dense(t) => t.clone(),
            GradBuf::Rows { rows: map, .. } => {
                let mut t = Tensor::zeros(rows, cols);
                for (&r, g) in map {
                    t.row_mut(r).copy_from_slice(g);
                }
                t
            }
        }
    }

    fn merge(&mut self, other: GradBuf) {
        match (&mut *self, other) {
            (GradBuf::Dense(a), GradBuf::Dense(b)) => a.add_assign(&b),
            (GradBuf::Rows { rows: a, .. }, GradBuf::Rows { rows: b, .. }) => {
                for (r, g) in b {
                    add_into(a.entry(r).or_insert_with(|| vec![0.0; g.len()]), &g);
                }
            }
            (GradBuf::Dense(a), GradBuf::Rows { rows: b, .. }) => {
                for (r, g) in b {
                    add_into(a.row_mut(r), &g);
                }
            }
            (slot @ GradBuf::Rows { .. }, GradBuf::Dense(mut b)) => {
                if let GradBuf::Rows { rows: a, .. } = slot {
                    for (r, g) in a.iter() {
                        add_into(b.row_mut(*r), g);
                    }
                }
                *slot = GradBuf::Dense(b);
            }
        }
    }
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    map: BTreeMap<ParamId, GradBuf>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&GradBuf> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &GradBuf)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `other` into `self`. Merging in a fixed order keeps sums
    /// reproducible when gradients come from several tapes.
    pub fn accumulate(&mut self, other: Grads) {
        for (id, g) in other.map {
            match self.map.get_mut(&id) {
                Some(slot) => slot.merge(g),
                None => {
                    self.map.insert(id, g);
                }
            }
        }
    }

    fn add_dense(&mut self, id: ParamId, g: Tensor) {
        match self.map.get_mut(&id) {
            Some(slot) => slot.merge(GradBuf::Dense(g)),
            None => {
                self.map.insert(id, GradBuf::Dense(g));
            }
        }
    }

    fn add_row(&mut self, id: ParamId, cols: usize, row: usize, g: &[f64]) {
        let slot = self.map.entry(id).or_insert_with(|| GradBuf::Rows {
            cols,
            rows: BTreeMap::new(),
        });
        match slot {
            GradBuf::Dense(t) => add_into(t.row_mut(row), g),
            GradBuf::Rows { rows, .. } => add_into(rows.entry(row).or_insert_with(|| vec![0.0; cols]), g),
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn shape_err(what: &str, a: [usize; 2], b: [usize; 2]) -> NnError {
    NnError::Shape(format!("{what}: {}x{} vs {}x{}", a[0], a[1], b[0], b[1]))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode, seed: u64) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient flows into it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Looks up rows of an embedding table parameter.
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Result<Var, NnError> {
        let t = self.store.value(table);
        let cols = t.cols();
        let mut out = Tensor::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            if r >= t.rows() {
                return Err(NnError::Shape(format!(
                    "row {r} out of range for table {} with {} rows",
                    self.store.get(table).name,
                    t.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        Ok(self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Selects rows of `x` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NnError> {
        let t = self.value(x);
        let mut out = Tensor::zeros(rows.len(), t.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= t.rows() {
                return Err(NnError::Shape(format!("row {r} out of range ({} rows)", t.rows())));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        Ok(self.push(out, Op::GatherRows { x, rows: rows.to_vec() }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            add_into(out.row_mut(r), tr.row(0));
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Scales each row of `a` by the matching entry of the `m x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NnError> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta.shape(), tc.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let s = tc.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(NnError::Shape("concat of nothing".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", [rows, cols], t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
                off += t.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    fn check_seg(&self, x: Var, seg: &[usize], n: usize) -> Result<(), NnError> {
        if seg.len() != self.value(x).rows() {
            return Err(NnError::Shape(format!(
                "{} segment ids for {} rows",
                seg.len(),
                self.value(x).rows()
            )));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n) {
            return Err(NnError::Shape(format!("segment id {bad} >= {n}")));
        }
        Ok(())
    }

    /// Row `i` of `x` is added into output row `seg[i]` (`n` output rows).
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], n: usize) -> Result<Var, NnError> {
        self.check_seg(x, seg, n)?;
        let t = self.value(x);
        let mut out = Tensor::zeros(n, t.cols());
        for (i, &s) in seg.iter().enumerate() {
            add_into(out.row_mut(s), t.row(i));
        }
        Ok(self.push(out, Op::SegmentSum { x, seg: seg.to_vec() }))
    }

    /// Mean of the rows in each segment; every segment must be non-empty.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], n: usize) -> Result<Var, NnError> {
        self.check_seg(x, seg, n)?;
        let mut counts = vec![0usize; n];
        for &s in seg {
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(NnError::Shape(format!("segment {empty} is empty")));
        }
        let t = self.value(x);
        let mut out = Tensor::zeros(n, t.cols());
        for (i, &s) in seg.iter().enumerate() {
            add_into(out.row_mut(s), t.row(i));
        }
        for (s, &c) in counts.iter().enumerate() {
            let inv = 1.0 / c as f64;
            out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                counts,
            },
        ))
    }

    /// Softmax of an `m x 1` column within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize], n: usize) -> Result<Var, NnError> {
        self.check_seg(x, seg, n)?;
        let t = self.value(x);
        if t.cols() != 1 {
            return Err(NnError::Shape("segment_softmax expects a column".into()));
        }
        let mut max = vec![f64::NEG_INFINITY; n];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(t.get(i, 0));
        }
        let mut sum = vec![0.0; n];
        let mut e: Vec<f64> = Vec::with_capacity(seg.len());
        for (i, &s) in seg.iter().enumerate() {
            let v = (t.get(i, 0) - max[s]).exp();
            sum[s] += v;
            e.push(v);
        }
        for (i, &s) in seg.iter().enumerate() {
            e[i] /= sum[s];
        }
        let out = Tensor::col_vector(&e);
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                x,
                seg: seg.to_vec(),
                n,
            },
        ))
    }

    /// Row-wise layer normalization with learned `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let (t, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = t.cols();
        if g.shape() != [1, c] || b.shape() != [1, c] {
            return Err(shape_err("layer_norm", t.shape(), g.shape()));
        }
        let mut xhat = Tensor::zeros(t.rows(), c);
        let mut inv_std = Vec::with_capacity(t.rows());
        let mut out = Tensor::zeros(t.rows(), c);
        for r in 0..t.rows() {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat.set(r, j, h);
                out.set(r, j, h * g.get(0, j) + b.get(0, j));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Identity in [`Mode::Eval`] or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Domain(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Scales every row to unit Euclidean norm. Zero rows are an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(NnError::ZeroNorm(r));
            }
            norms.push(n);
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(out, Op::L2NormRows { x, norms }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Row-wise dot product, `m x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("row_dot", ta.shape(), tb.shape()));
        }
        let vals: Vec<f64> = (0..ta.rows())
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::col_vector(&vals), Op::RowDot(a, b)))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::row_vector(&[s]), Op::Sum(x))
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let t = self.value(logits);
        if targets.len() != t.rows() || t.rows() == 0 {
            return Err(NnError::Shape(format!(
                "{} targets for {} rows",
                targets.len(),
                t.rows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= t.cols()) {
            return Err(NnError::Shape(format!("target {bad} >= {} classes", t.cols())));
        }
        let probs = softmax_rows(t);
        let loss = (0..t.rows())
            .map(|r| log_sum_exp(t.row(r).iter().copied()) - t.get(r, targets[r]))
            .sum::<f64>()
            / t.rows() as f64;
        Ok(self.push(
            Tensor::row_vector(&[loss]),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Weighted sum over segments of `-log softmax_segment(scores)[target]`.
    ///
    /// `scores` is an `m x 1` column, `seg[i]` names the segment of row `i`,
    /// and `targets[s]` is the row index of the positive in segment `s`.
    pub fn segment_cross_entropy(
        &mut self,
        scores: Var,
        seg: &[usize],
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, NnError> {
        let n = targets.len();
        if weights.len() != n {
            return Err(NnError::Shape("one weight per segment".into()));
        }
        self.check_seg(scores, seg, n)?;
        let t = self.value(scores);
        if t.cols() != 1 {
            return Err(NnError::Shape("segment_cross_entropy expects a column".into()));
        }
        for (s, &ti) in targets.iter().enumerate() {
            if ti >= seg.len() || seg[ti] != s {
                return Err(NnError::Shape(format!("target row {ti} is not in segment {s}")));
            }
        }
        let mut max = vec![f64::NEG_INFINITY; n];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(t.get(i, 0));
        }
        let mut sum = vec![0.0; n];
        for (i, &s) in seg.iter().enumerate() {
            sum[s] += (t.get(i, 0) - max[s]).exp();
        }
        let probs: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (t.get(i, 0) - max[s]).exp() / sum[s])
            .collect();
        let loss: f64 = (0..n)
            .map(|s| weights[s] * (max[s] + sum[s].ln() - t.get(targets[s], 0)))
            .sum();
        Ok(self.push(
            Tensor::row_vector(&[loss]),
            Op::SegmentCrossEntropy {
                scores,
                seg: seg.to_vec(),
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        ))
    }

    /// Averaged pairwise hinge `mean max(0, γ − s_p + s_n)` over columns
    /// of positive and negative scores.
    pub fn margin_rank(&mut self, pos: Var, neg: Var, gamma: f64) -> Result<Var, NnError> {
        let (tp, tn) = (self.value(pos), self.value(neg));
        if tp.cols() != 1 || tn.cols() != 1 {
            return Err(NnError::Shape("margin_rank expects columns".into()));
        }
        let loss = crate::loss::margin_rank(tp.data(), tn.data(), gamma)?;
        Ok(self.push(Tensor::row_vector(&[loss]), Op::MarginRank { pos, neg, gamma }))
    }

    /// Back-propagates from the scalar `loss` and collects parameter
    /// gradients. Frozen parameters are skipped.
    pub fn backward(&self, loss: Var) -> Result<Grads, NnError> {
        if self.value(loss).shape() != [1, 1] {
            return Err(NnError::Shape("backward needs a 1x1 loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::row_vector(&[1.0]));
        let mut out = Grads::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backward_node(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Grads) -> Result<(), NnError> {
        let node = &self.nodes[i];
        let y = match &node.value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if !self.store.get(*id).frozen {
                    out.add_dense(*id, g);
                }
            }
            Op::Gather { table, rows } => {
                if !self.store.get(*table).frozen {
                    let cols = g.cols();
                    for (k, &r) in rows.iter().enumerate() {
                        out.add_row(*table, cols, r, g.row(k));
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let mut dx = Tensor::zeros(self.value(*x).rows(), g.cols());
                for (k, &r) in rows.iter().enumerate() {
                    add_into(dx.row_mut(r), g.row(k));
                }
                acc(grads, *x, dx);
            }
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(*b))?;
                let db = self.value(*a).matmul_tn(&g)?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::MatMulNT(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                let da = g.matmul(self.value(*b))?;
                let db = g.matmul_tn(self.value(*a))?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = zip(&g, tb, |x, y| x * y);
                let db = zip(&g, ta, |x, y| x * y);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddRow(a, row) => {
                let mut dr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    add_into(dr.row_mut(0), g.row(r));
                }
                acc(grads, *a, g);
                acc(grads, *row, dr);
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let mut da = g.clone();
                let mut dc = Tensor::zeros(tc.rows(), 1);
                for r in 0..g.rows() {
                    let s = tc.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    dc.set(r, 0, g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum());
                }
                acc(grads, *a, da);
                acc(grads, *col, dc);
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|v| v * s)),
            Op::LeakyRelu(a, slope) => {
                let ta = self.value(*a);
                acc(grads, *a, zip(&g, ta, |gv, x| if x > 0.0 { gv } else { slope * gv }));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = Tensor::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    off += c;
                    acc(grads, p, dp);
                }
            }
            Op::SegmentSum { x, seg } => {
                let mut dx = Tensor::zeros(seg.len(), g.cols());
                for (k, &s) in seg.iter().enumerate() {
                    dx.row_mut(k).copy_from_slice(g.row(s));
                }
                acc(grads, *x, dx);
            }
            Op::SegmentMean { x, seg, counts } => {
                let mut dx = Tensor::zeros(seg.len(), g.cols());
                for (k, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for (d, v) in dx.row_mut(k).iter_mut().zip(g.row(s)) {
                        *d = v * inv;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SegmentSoftmax { x, seg, n } => {
                let mut dot = vec![0.0; *n];
                for (k, &s) in seg.iter().enumerate() {
                    dot[s] += g.get(k, 0) * y.get(k, 0);
                }
                let vals: Vec<f64> = seg
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| y.get(k, 0) * (g.get(k, 0) - dot[s]))
                    .collect();
                acc(grads, *x, Tensor::col_vector(&vals));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = self.value(*gamma);
                let c = g.cols();
                let mut dx = Tensor::zeros(g.rows(), c);
                let mut dg = Tensor::zeros(1, c);
                let mut db = Tensor::zeros(1, c);
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let hr = xhat.row(r);
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..c {
                        let dh = gr[j] * gm.get(0, j);
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dg.data_mut()[j] += gr[j] * hr[j];
                        db.data_mut()[j] += gr[j];
                    }
                    let inv = inv_std[r];
                    let row = dx.row_mut(r);
                    for j in 0..c {
                        let dh = gr[j] * gm.get(0, j);
                        row[j] = inv / c as f64 * (c as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dg);
                acc(grads, *beta, db);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(v, m)| v * m).collect();
                acc(grads, *x, Tensor::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::L2NormRows { x, norms } => {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let d: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                        *v = (gr[j] - yr[j] * d) / norms[r];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let d: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                        *v = yr[j] * (gr[j] - d);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut da = tb.clone();
                let mut db = ta.clone();
                for r in 0..g.rows() {
                    let s = g.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    db.row_mut(r).iter_mut().for_each(|v| *v *= s);
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Sum(x) => {
                let t = self.value(*x);
                acc(grads, *x, Tensor::filled(t.rows(), t.cols(), g.scalar()));
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let k = probs.rows() as f64;
                let s = g.scalar() / k;
                let mut dx = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    dx.row_mut(r)[t] -= 1.0;
                }
                dx.scale_assign(s);
                acc(grads, *logits, dx);
            }
            Op::SegmentCrossEntropy {
                scores,
                seg,
                targets,
                weights,
                probs,
            } => {
                let s = g.scalar();
                let mut vals: Vec<f64> = seg
                    .iter()
                    .enumerate()
                    .map(|(k, &sg)| s * weights[sg] * probs[k])
                    .collect();
                for (sg, &t) in targets.iter().enumerate() {
                    vals[t] -= s * weights[sg];
                }
                acc(grads, *scores, Tensor::col_vector(&vals));
            }
            Op::MarginRank { pos, neg, gamma } => {
                let (tp, tn) = (self.value(*pos), self.value(*neg));
                let w = g.scalar() / (tp.rows() * tn.rows()) as f64;
                let mut dp = Tensor::zeros(tp.rows(), 1);
                let mut dn = Tensor::zeros(tn.rows(), 1);
                for i in 0..tp.rows() {
                    for j in 0..tn.rows() {
                        if gamma - tp.get(i, 0) + tn.get(j, 0) > 0.0 {
                            dp.data_mut()[i] -= w;
                            dn.data_mut()[j] += w;
                        }
                    }
                }
                acc(grads, *pos, dp);
                acc(grads, *neg, dn);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}
