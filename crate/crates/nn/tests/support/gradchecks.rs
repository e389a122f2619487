// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference checks for every differentiable operation,
//! shared with the acceptance suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtloc_nn::{Affine, GatV2, Graph, Mode, ParamId, ParamStore, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
pub const SHAPES: u64 = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Returns the norm-wise relative error between the tape gradient and
/// central differences, over every parameter in the store.
fn check(store: &mut ParamStore, build: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let analytic = {
        let mut g = Graph::new(store, Mode::Train, 99);
        let loss = build(&mut g);
        g.backward(loss).unwrap()
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store, Mode::Train, 99);
        let loss = build(&mut g);
        g.value(loss).scalar()
    };
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let (mut diff, mut scale_a, mut scale_n) = (0.0f64, 0.0f64, 0.0f64);
    for id in ids {
        let [r, c] = store.value(id).shape();
        let a = analytic
            .get(id)
            .map(|g| g.to_dense(r, c))
            .unwrap_or_else(|| Tensor::zeros(r, c));
        for k in 0..r * c {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + H;
            let up = eval(store);
            store.value_mut(id).data_mut()[k] = orig - H;
            let down = eval(store);
            store.value_mut(id).data_mut()[k] = orig;
            let num = (up - down) / (2.0 * H);
            diff += (num - a.data()[k]).powi(2);
            scale_a += a.data()[k].powi(2);
            scale_n += num * num;
        }
    }
    diff.sqrt() / scale_a.sqrt().max(scale_n.sqrt()).max(1e-12)
}

/// Sums `out ⊙ weights` so every output entry gets a distinct gradient.
fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let [r, c] = g.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = g.input(rand_tensor(&mut rng, r, c));
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

/// A named check: relative error for one random shape per seed.
pub type Check = (&'static str, fn(u64) -> f64);

/// Worst relative error over `SHAPES` seeds.
pub fn worst(check: &Check) -> f64 {
    (0..SHAPES).map(check.1).fold(0.0, f64::max)
}

pub fn all() -> Vec<Check> {
    [
        elementwise_and_products(),
        activations_and_normalizations(),
        indexing_and_segments(),
        losses(),
        layers(),
    ]
    .concat()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
}

pub fn elementwise_and_products() -> Vec<Check> {
    vec![
        ("matmul", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, k, n) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, k));
            let b = s.add_tensor("b", rand_tensor(&mut rng, k, n));
            let bt = s.add_tensor("bt", rand_tensor(&mut rng, n, k));
            check(&mut s, &|g| {
                let (a, b, bt) = (g.param(a), g.param(b), g.param(bt));
                let x = g.matmul(a, b).unwrap();
                let y = g.matmul_nt(a, bt).unwrap();
                let z = g.add(x, y).unwrap();
                project(g, z, seed)
            })
        }),
        ("add/sub/mul/scale", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            let b = s.add_tensor("b", rand_tensor(&mut rng, m, n));
            check(&mut s, &|g| {
                let (a, b) = (g.param(a), g.param(b));
                let x = g.mul(a, b).unwrap();
                let y = g.sub(x, b).unwrap();
                let z = g.scale(y, -1.7);
                let w = g.add(z, a).unwrap();
                project(g, w, seed)
            })
        }),
        ("add_row/mul_col", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            let r = s.add_tensor("r", rand_tensor(&mut rng, 1, n));
            let c = s.add_tensor("c", rand_tensor(&mut rng, m, 1));
            check(&mut s, &|g| {
                let (a, r, c) = (g.param(a), g.param(r), g.param(c));
                let x = g.add_row(a, r).unwrap();
                let y = g.mul_col(x, c).unwrap();
                project(g, y, seed)
            })
        }),
        ("row_dot", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            let b = s.add_tensor("b", rand_tensor(&mut rng, m, n));
            check(&mut s, &|g| {
                let (a, b) = (g.param(a), g.param(b));
                let d = g.row_dot(a, b).unwrap();
                project(g, d, seed)
            })
        }),
    ]
}

pub fn activations_and_normalizations() -> Vec<Check> {
    vec![
        ("leaky_relu", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            check(&mut s, &|g| {
                let a = g.param(a);
                let y = g.leaky_relu(a, 0.2);
                project(g, y, seed)
            })
        }),
        ("softmax_rows", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n + 1));
            check(&mut s, &|g| {
                let a = g.param(a);
                let y = g.softmax_rows(a);
                project(g, y, seed)
            })
        }),
        ("l2_normalize_rows", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n + 1));
            check(&mut s, &|g| {
                let a = g.param(a);
                let y = g.l2_normalize_rows(a).unwrap();
                project(g, y, seed)
            })
        }),
        ("layer_norm", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let n = n + 1;
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            let gm = s.add_tensor("g", rand_tensor(&mut rng, 1, n));
            let bt = s.add_tensor("b", rand_tensor(&mut rng, 1, n));
            check(&mut s, &|g| {
                let (a, gm, bt) = (g.param(a), g.param(gm), g.param(bt));
                let y = g.layer_norm(a, gm, bt, 1e-5).unwrap();
                project(g, y, seed)
            })
        }),
        ("dropout", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, m, n));
            check(&mut s, &|g| {
                let a = g.param(a);
                let y = g.dropout(a, 0.3).unwrap();
                project(g, y, seed)
            })
        }),
    ]
}

pub fn indexing_and_segments() -> Vec<Check> {
    vec![
        ("gather/gather_rows/concat", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, k) = dims(&mut rng);
            let mut s = ParamStore::new();
            let table = s.add_tensor("table", rand_tensor(&mut rng, m + 2, n));
            let x = s.add_tensor("x", rand_tensor(&mut rng, k, n));
            let rows: Vec<usize> = (0..k).map(|_| rng.random_range(0..m + 2)).collect();
            let sel: Vec<usize> = (0..k + 1).map(|_| rng.random_range(0..k)).collect();
            check(&mut s, &|g| {
                let t = g.gather(table, &rows).unwrap();
                let x = g.param(x);
                let c = g.concat_cols(&[t, x]).unwrap();
                let y = g.gather_rows(c, &sel).unwrap();
                project(g, y, seed)
            })
        }),
        ("segment_sum/mean/softmax", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, segs) = dims(&mut rng);
            let rows = m + segs;
            let mut seg: Vec<usize> = (0..segs).collect();
            seg.extend((0..m).map(|_| rng.random_range(0..segs)));
            let mut s = ParamStore::new();
            let a = s.add_tensor("a", rand_tensor(&mut rng, rows, n));
            let e = s.add_tensor("e", rand_tensor(&mut rng, rows, 1));
            check(&mut s, &|g| {
                let (a, e) = (g.param(a), g.param(e));
                let sm = g.segment_sum(a, &seg, segs).unwrap();
                let mean = g.segment_mean(a, &seg, segs).unwrap();
                let alpha = g.segment_softmax(e, &seg, segs).unwrap();
                let w = g.mul_col(a, alpha).unwrap();
                let ws = g.segment_sum(w, &seg, segs).unwrap();
                let t = g.add(sm, mean).unwrap();
                let t = g.add(t, ws).unwrap();
                project(g, t, seed)
            })
        }),
    ]
}

pub fn losses() -> Vec<Check> {
    vec![
        ("cross_entropy_rows (mnrl)", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..6);
            let mut s = ParamStore::new();
            let sim = s.add_tensor("sim", rand_tensor(&mut rng, k, k));
            let diag: Vec<usize> = (0..k).collect();
            check(&mut s, &|g| {
                let sim = g.param(sim);
                let l = g.scale(sim, 2.0);
                g.cross_entropy_rows(l, &diag).unwrap()
            })
        }),
        ("segment_cross_entropy (listwise infonce)", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let segs = rng.random_range(1..4);
            let mut seg = Vec::new();
            let mut targets = Vec::new();
            for sgi in 0..segs {
                let size = rng.random_range(1..5);
                targets.push(seg.len() + rng.random_range(0..size));
                seg.extend(std::iter::repeat(sgi).take(size));
            }
            let weights: Vec<f64> = (0..segs).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut s = ParamStore::new();
            let sc = s.add_tensor("scores", rand_tensor(&mut rng, seg.len(), 1));
            check(&mut s, &|g| {
                let sc = g.param(sc);
                let l = g.scale(sc, 2.0);
                g.segment_cross_entropy(l, &seg, &targets, &weights).unwrap()
            })
        }),
        ("margin_rank", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, n, _) = dims(&mut rng);
            let mut s = ParamStore::new();
            let pos = s.add_tensor("pos", rand_tensor(&mut rng, p, 1));
            let neg = s.add_tensor("neg", rand_tensor(&mut rng, n, 1));
            check(&mut s, &|g| {
                let (pos, neg) = (g.param(pos), g.param(neg));
                g.margin_rank(pos, neg, 0.5).unwrap()
            })
        }),
    ]
}

pub fn layers() -> Vec<Check> {
    vec![
        ("affine", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, i, o) = dims(&mut rng);
            let mut s = ParamStore::new();
            let layer = Affine::new(&mut s, "aff", i, o, true, seed);
            let x = s.add_tensor("x", rand_tensor(&mut rng, m, i));
            // bias starts at zero; move it off so its gradient is exercised
            let b = layer.bias.unwrap();
            *s.value_mut(b) = rand_tensor(&mut rng, 1, o);
            check(&mut s, &|g| {
                let x = g.param(x);
                let y = layer.forward(g, x).unwrap();
                project(g, y, seed)
            })
        }),
        ("gatv2", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..6);
            let (d_in, d_out, d_e) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
            let m = rng.random_range(0..2 * n);
            let edges: Vec<(usize, usize)> = (0..m)
                .filter_map(|_| {
                    let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                    (a != b).then_some((a, b))
                })
                .collect();
            let mut s = ParamStore::new();
            let layer = GatV2::new(&mut s, "gat", d_in, d_out, d_e, seed);
            let h = s.add_tensor("h", rand_tensor(&mut rng, n, d_in));
            let ef = s.add_tensor("ef", rand_tensor(&mut rng, edges.len(), d_e));
            check(&mut s, &|g| {
                let h = g.param(h);
                let ef = g.param(ef);
                let y = layer.forward(g, h, &edges, Some(ef)).unwrap();
                project(g, y, seed)
            })
        }),
    ]
}
