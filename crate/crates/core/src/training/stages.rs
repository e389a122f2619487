// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtloc_nn::{linear_warmup_lr, AdamWConfig, Graph, Mode, OptimizerState, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::sampler::constrained_batches;
use super::{TrainConfig, TrainData, TrainError, TrainQuery};
use crate::encoders::glide::concat_inputs;
use crate::encoders::{fuse_score, EvidenceVector, Glide, LocalEncoder, Router, TextEncoder};
use crate::graph::BlockDfg;
use crate::retrieval::index::{minmax, order};

/// Per-epoch training loss and validation MRR of one stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub loss_curve: Vec<f64>,
    pub val_mrr: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept, when selected on validation.
    pub best_epoch: Option<usize>,
}

const CHUNK: usize = 64;

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stage)
}

fn graph_seed(seed: u64, stage: u64, epoch: usize, batch: usize) -> u64 {
    let mut h = seed ^ 0x5851_f42d_4c95_7f2d;
    for x in [stage, epoch as u64, batch as u64] {
        h = (h ^ x).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
    }
    h
}

fn adamw(cfg: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    }
}

/// Up to `k` distinct positions of `0..n` outside `exclude`.
fn sample_negatives(n: usize, exclude: &BTreeSet<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    if pool.len() <= k {
        return pool;
    }
    rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

pub(crate) fn embed_texts(enc: &TextEncoder, texts: &[String]) -> Result<Vec<Vec<f64>>, TrainError> {
    let chunks: Vec<&[String]> = texts.chunks(CHUNK).collect();
    let mut out = Vec::with_capacity(texts.len());
    for p in crate::par::map(&chunks, |c| enc.embed_batch(c)) {
        out.extend(p?);
    }
    Ok(out)
}

pub(crate) fn embed_dfgs(enc: &LocalEncoder, dfgs: &[BlockDfg]) -> Result<Vec<Vec<f64>>, TrainError> {
    let chunks: Vec<Vec<&BlockDfg>> = dfgs.chunks(CHUNK).map(|c| c.iter().collect()).collect();
    let mut out = Vec::with_capacity(dfgs.len());
    for p in crate::par::map(&chunks, |c| enc.embed_batch(c)) {
        out.extend(p?);
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean reciprocal rank of the first positive under per-query scores.
fn mrr_of(data: &TrainData, queries: &[TrainQuery], mut scores: impl FnMut(usize, &TrainQuery) -> Vec<f64>) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, q) in queries.iter().enumerate() {
        let s = scores(i, q);
        let ids = &data.snapshots[&q.snapshot].block_ids;
        let pos: BTreeSet<usize> = q.positives.iter().copied().collect();
        if let Some(r) = order(ids, &s).iter().position(|i| pos.contains(i)) {
            sum += 1.0 / (r + 1) as f64;
        }
    }
    sum / queries.len() as f64
}

fn texts_of(queries: &[TrainQuery]) -> Vec<String> {
    queries.iter().map(|q| q.text.clone()).collect()
}

/// Keeps the parameters of the best validation epoch.
struct Selector {
    enabled: bool,
    best: Option<(f64, usize, ParamStore)>,
}

impl Selector {
    fn new(enabled: bool) -> Self {
        Selector { enabled, best: None }
    }

    fn offer(&mut self, mrr: f64, epoch: usize, store: &ParamStore) {
        if !self.enabled {
            return;
        }
        if self.best.as_ref().map_or(true, |(b, _, _)| mrr > *b) {
            self.best = Some((mrr, epoch, store.clone()));
        }
    }

    fn finish(self, store: &mut ParamStore, log: &mut StageLog) {
        if let Some((_, epoch, best)) = self.best {
            *store = best;
            log.best_epoch = Some(epoch);
        }
    }
}

/// Stage 1: in-batch multiple-negatives ranking over (query, block text).
pub fn train_text(data: &TrainData, cfg: &TrainConfig) -> Result<(TextEncoder, StageLog), TrainError> {
    let mut model = TextEncoder::new(&cfg.model, cfg.seed);
    let sc = &cfg.text;
    let mut pairs = Vec::new();
    for (qi, q) in data.train.iter().enumerate() {
        for &p in &q.positives {
            pairs.push((qi, p));
        }
    }
    if pairs.is_empty() {
        return Err(TrainError::NoTrainingData("text"));
    }
    let groups: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut rng = stage_rng(cfg.seed, 1);
    let total = sc.epochs * pairs.len().div_ceil(sc.batch_size.max(1));
    let mut opt = OptimizerState::new(&model.store, adamw(cfg));
    let inv_tau = 1.0 / cfg.model.tau_text;
    let mut log = StageLog::default();
    let mut step = 0;
    for epoch in 0..sc.epochs {
        let batches = constrained_batches(&groups, sc.batch_size, &mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let qs: Vec<&str> = batch.iter().map(|&p| data.train[pairs[p].0].text.as_str()).collect();
            let bs: Vec<&str> = batch
                .iter()
                .map(|&p| {
                    let q = &data.train[pairs[p].0];
                    data.snapshots[&q.snapshot].texts[pairs[p].1].as_str()
                })
                .collect();
            let (loss, grads) = {
                let mut g = Graph::new(&model.store, Mode::Train, graph_seed(cfg.seed, 1, epoch, bi));
                let q = model.forward(&mut g, &qs)?;
                let b = model.forward(&mut g, &bs)?;
                let sim = g.matmul_nt(q, b)?;
                let logits = g.scale(sim, inv_tau);
                let targets: Vec<usize> = (0..batch.len()).collect();
                let loss = g.cross_entropy_rows(logits, &targets)?;
                (g.value(loss).scalar(), g.backward(loss)?)
            };
            opt.step(
                &mut model.store,
                &grads,
                linear_warmup_lr(step, total, sc.lr, sc.warmup_frac),
            );
            step += 1;
            sum += loss;
            n += 1;
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        debug!("text epoch {epoch}: loss {mean:.5}");
        log.loss_curve.push(mean);
    }
    info!("text stage: {} pairs, {step} steps", pairs.len());
    Ok((model, log))
}

/// Pairs of the training split grouped by snapshot: `(query, positive)`.
fn pairs_by_snapshot(queries: &[TrainQuery]) -> BTreeMap<&str, Vec<(usize, usize)>> {
    let mut m: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (qi, q) in queries.iter().enumerate() {
        for &p in &q.positives {
            m.entry(q.snapshot.as_str()).or_default().push((qi, p));
        }
    }
    m
}

/// Candidate layout for one listwise batch: candidate rows, the pair each
/// candidate belongs to, and the positive's row within each pair.
#[derive(Default)]
struct Listwise {
    cands: Vec<usize>,
    seg: Vec<usize>,
    targets: Vec<usize>,
    query_of: Vec<usize>,
}

fn listwise(
    items: &[(usize, usize)],
    queries: &[TrainQuery],
    n_blocks: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
    warned: &mut bool,
) -> Listwise {
    let mut l = Listwise::default();
    for (j, &(qi, pos)) in items.iter().enumerate() {
        let exclude: BTreeSet<usize> = queries[qi].positives.iter().copied().collect();
        let negs = sample_negatives(n_blocks, &exclude, negatives, rng);
        if negs.len() < negatives && !*warned {
            warn!(
                "snapshot {} has only {} negatives for {}",
                queries[qi].snapshot,
                negs.len(),
                queries[qi].id
            );
            *warned = true;
        }
        l.targets.push(l.cands.len());
        for c in std::iter::once(pos).chain(negs) {
            l.cands.push(c);
            l.seg.push(j);
            l.query_of.push(qi);
        }
    }
    l
}

/// Stage 2: InfoNCE aligning block DFG embeddings with frozen query text
/// embeddings; negatives come from the positive's own snapshot.
pub fn train_local(
    data: &TrainData,
    text: &TextEncoder,
    cfg: &TrainConfig,
) -> Result<(LocalEncoder, StageLog), TrainError> {
    let mut model = LocalEncoder::new(&cfg.model, cfg.seed);
    let sc = &cfg.local;
    let q_train = embed_texts(text, &texts_of(&data.train))?;
    let q_val = embed_texts(text, &texts_of(&data.val))?;
    let by_snap = pairs_by_snapshot(&data.train);
    let mut rng = stage_rng(cfg.seed, 2);
    let total = sc.epochs * by_snap.len();
    let mut opt = OptimizerState::new(&model.store, adamw(cfg));
    let inv_tau = 1.0 / cfg.model.tau_local;
    let mut log = StageLog::default();
    let mut sel = Selector::new(cfg.select_on_validation && !data.val.is_empty());
    let mut step = 0;
    let mut warned = false;
    for epoch in 0..sc.epochs {
        let mut order_: Vec<&str> = by_snap.keys().copied().collect();
        order_.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for (bi, sid) in order_.iter().enumerate() {
            let snap = &data.snapshots[*sid];
            let items = &by_snap[sid];
            let lw = listwise(items, &data.train, snap.len(), sc.negatives, &mut rng, &mut warned);
            // encode each needed block once
            let mut row_of: BTreeMap<usize, usize> = BTreeMap::new();
            let mut blocks: Vec<&BlockDfg> = Vec::new();
            let rows: Vec<usize> = lw
                .cands
                .iter()
                .map(|&c| {
                    *row_of.entry(c).or_insert_with(|| {
                        blocks.push(&snap.dfgs[c]);
                        blocks.len() - 1
                    })
                })
                .collect();
            let qrows: Vec<Vec<f64>> = lw.query_of.iter().map(|&qi| q_train[qi].clone()).collect();
            let weights = vec![1.0 / items.len() as f64; items.len()];
            let (loss, grads) = {
                let mut g = Graph::new(&model.store, Mode::Train, graph_seed(cfg.seed, 2, epoch, bi));
                let h = model.forward(&mut g, &blocks)?;
                let hc = g.gather_rows(h, &rows)?;
                let q = g.input(Tensor::from_rows(&qrows)?);
                let s = g.row_dot(hc, q)?;
                let s = g.scale(s, inv_tau);
                let loss = g.segment_cross_entropy(s, &lw.seg, &lw.targets, &weights)?;
                (g.value(loss).scalar(), g.backward(loss)?)
            };
            opt.step(
                &mut model.store,
                &grads,
                linear_warmup_lr(step, total, sc.lr, sc.warmup_frac),
            );
            step += 1;
            sum += loss;
            n += 1;
        }
        log.loss_curve.push(if n > 0 { sum / n as f64 } else { 0.0 });
        if sel.enabled {
            let mut cache: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
            for q in &data.val {
                if !cache.contains_key(q.snapshot.as_str()) {
                    cache.insert(
                        q.snapshot.as_str(),
                        embed_dfgs(&model, &data.snapshots[&q.snapshot].dfgs)?,
                    );
                }
            }
            let mrr = mrr_of(data, &data.val, |i, q| {
                cache[q.snapshot.as_str()].iter().map(|h| dot(&q_val[i], h)).collect()
            });
            debug!(
                "local epoch {epoch}: loss {:.5} val mrr {mrr:.4}",
                log.loss_curve[epoch]
            );
            log.val_mrr.push(mrr);
            sel.offer(mrr, epoch, &model.store);
        }
    }
    sel.finish(&mut model.store, &mut log);
    Ok((model, log))
}

/// Frozen per-snapshot inputs for the global stage.
struct GlideInputs {
    x: BTreeMap<String, Tensor>,
}

fn glide_inputs(
    data: &TrainData,
    text: &TextEncoder,
    local: &LocalEncoder,
    width: usize,
) -> Result<GlideInputs, TrainError> {
    let mut x = BTreeMap::new();
    for (id, p) in &data.snapshots {
        let t = embed_texts(text, &p.texts)?;
        let l = embed_dfgs(local, &p.dfgs)?;
        x.insert(id.clone(), concat_inputs(&t, &l, width)?);
    }
    Ok(GlideInputs { x })
}

/// Stage 3: listwise InfoNCE over the propagated block embeddings, each
/// positive against negatives from the same design.
pub fn train_glide(
    data: &TrainData,
    text: &TextEncoder,
    local: &LocalEncoder,
    cfg: &TrainConfig,
) -> Result<(Glide, StageLog), TrainError> {
    let mut model = Glide::new(&cfg.model, cfg.seed);
    let sc = &cfg.glide;
    let inputs = glide_inputs(data, text, local, model.in_dim)?;
    let q_train = embed_texts(text, &texts_of(&data.train))?;
    let q_val = embed_texts(text, &texts_of(&data.val))?;
    let by_snap = pairs_by_snapshot(&data.train);
    let mut rng = stage_rng(cfg.seed, 3);
    let total = sc.epochs * by_snap.len();
    let mut opt = OptimizerState::new(&model.store, adamw(cfg));
    let inv_tau = 1.0 / cfg.model.tau_glide;
    let mut log = StageLog::default();
    let mut sel = Selector::new(cfg.select_on_validation && !data.val.is_empty());
    let mut step = 0;
    let mut warned = false;
    for epoch in 0..sc.epochs {
        let mut order_: Vec<&str> = by_snap.keys().copied().collect();
        order_.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for (bi, sid) in order_.iter().enumerate() {
            let snap = &data.snapshots[*sid];
            let items = &by_snap[sid];
            let lw = listwise(items, &data.train, snap.len(), sc.negatives, &mut rng, &mut warned);
            let qrows: Vec<Vec<f64>> = lw.query_of.iter().map(|&qi| q_train[qi].clone()).collect();
            let weights = vec![1.0 / items.len() as f64; items.len()];
            let (loss, grads) = {
                let mut g = Graph::new(&model.store, Mode::Train, graph_seed(cfg.seed, 3, epoch, bi));
                let x = g.input(inputs.x[*sid].clone());
                let h = model.forward(&mut g, x, &snap.edges, &snap.edge_types)?;
                let hc = g.gather_rows(h, &lw.cands)?;
                let q = g.input(Tensor::from_rows(&qrows)?);
                let q = model.project_query(&mut g, q)?;
                let s = g.row_dot(hc, q)?;
                let s = g.scale(s, inv_tau);
                let loss = g.segment_cross_entropy(s, &lw.seg, &lw.targets, &weights)?;
                (g.value(loss).scalar(), g.backward(loss)?)
            };
            opt.step(
                &mut model.store,
                &grads,
                linear_warmup_lr(step, total, sc.lr, sc.warmup_frac),
            );
            step += 1;
            sum += loss;
            n += 1;
        }
        log.loss_curve.push(if n > 0 { sum / n as f64 } else { 0.0 });
        if sel.enabled {
            let qg = model.embed_queries(&q_val)?;
            let mut cache: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
            for q in &data.val {
                if !cache.contains_key(q.snapshot.as_str()) {
                    let p = &data.snapshots[&q.snapshot];
                    let mut g = Graph::new(&model.store, Mode::Eval, 0);
                    let x = g.input(inputs.x[&q.snapshot].clone());
                    let h = model.forward(&mut g, x, &p.edges, &p.edge_types)?;
                    let t = g.value(h);
                    cache.insert(q.snapshot.as_str(), (0..t.rows()).map(|r| t.row(r).to_vec()).collect());
                }
            }
            let mrr = mrr_of(data, &data.val, |i, q| {
                cache[q.snapshot.as_str()].iter().map(|h| dot(&qg[i], h)).collect()
            });
            debug!(
                "glide epoch {epoch}: loss {:.5} val mrr {mrr:.4}",
                log.loss_curve[epoch]
            );
            log.val_mrr.push(mrr);
            sel.offer(mrr, epoch, &model.store);
        }
    }
    sel.finish(&mut model.store, &mut log);
    Ok((model, log))
}

/// Evidence of every block of each query's snapshot under the frozen experts.
pub(crate) fn query_evidence(
    data: &TrainData,
    queries: &[TrainQuery],
    text: &TextEncoder,
    local: &LocalEncoder,
    glide: &Glide,
    rescale: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<EvidenceVector>>), TrainError> {
    let mut per_snap: BTreeMap<&str, (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = BTreeMap::new();
    for q in queries {
        if per_snap.contains_key(q.snapshot.as_str()) {
            continue;
        }
        let p = &data.snapshots[&q.snapshot];
        let t = embed_texts(text, &p.texts)?;
        let l = embed_dfgs(local, &p.dfgs)?;
        let g = glide.embed_blocks(&t, &l, &p.edges, &p.edge_types)?;
        per_snap.insert(q.snapshot.as_str(), (t, l, g));
    }
    let qt = embed_texts(text, &texts_of(queries))?;
    let qg = glide.embed_queries(&qt)?;
    let ev = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let (t, l, g) = &per_snap[q.snapshot.as_str()];
            let mut v: Vec<EvidenceVector> = (0..t.len())
                .map(|b| EvidenceVector {
                    s_txt: dot(&qt[i], &t[b]),
                    s_loc: dot(&qt[i], &l[b]),
                    s_glob: dot(&qg[i], &g[b]),
                })
                .collect();
            if rescale {
                minmax(&mut v);
            }
            v
        })
        .collect();
    Ok((qt, ev))
}

/// Stage 4: only the router learns, from the averaged pairwise margin loss
/// over fused scores of positives and sampled negatives.
pub fn train_router(
    data: &TrainData,
    text: &TextEncoder,
    local: &LocalEncoder,
    glide: &Glide,
    cfg: &TrainConfig,
) -> Result<(Router, StageLog), TrainError> {
    let mut model = Router::new(&cfg.model, cfg.seed);
    let sc = &cfg.router;
    let rescale = cfg.model.minmax_evidence;
    // Experts fit their own training queries almost perfectly, so evidence
    // on those queries says little about which expert generalizes.
    let held_out = cfg.router_on_validation && !data.val.is_empty();
    let fit: &[TrainQuery] = if held_out { &data.val } else { &data.train };
    let (q_train, ev_train) = query_evidence(data, fit, text, local, glide, rescale)?;
    let (q_val, ev_val) = if held_out {
        (Vec::new(), Vec::new())
    } else {
        query_evidence(data, &data.val, text, local, glide, rescale)?
    };
    let usable: Vec<usize> = (0..fit.len()).filter(|&i| !fit[i].positives.is_empty()).collect();
    if usable.is_empty() {
        return Err(TrainError::NoTrainingData("router"));
    }
    let mut rng = stage_rng(cfg.seed, 4);
    let bs = sc.batch_size.max(1);
    let total = sc.epochs * usable.len().div_ceil(bs);
    let mut opt = OptimizerState::new(&model.store, adamw(cfg));
    let mut log = StageLog::default();
    let mut sel = Selector::new(cfg.select_on_validation && !held_out && !data.val.is_empty());
    let mut step = 0;
    for epoch in 0..sc.epochs {
        let mut idx = usable.clone();
        idx.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for (bi, batch) in idx.chunks(bs).enumerate() {
            let mut arow = Vec::new();
            let mut vp = Vec::new();
            let mut vn = Vec::new();
            let mut w = Vec::new();
            for (j, &qi) in batch.iter().enumerate() {
                let q = &fit[qi];
                let exclude: BTreeSet<usize> = q.positives.iter().copied().collect();
                let negs = sample_negatives(ev_train[qi].len(), &exclude, sc.negatives, &mut rng);
                if negs.is_empty() {
                    continue;
                }
                let wt = 1.0 / (q.positives.len() * negs.len() * batch.len()) as f64;
                for &p in &q.positives {
                    for &ng in &negs {
                        arow.push(j);
                        vp.push(ev_train[qi][p].as_array().to_vec());
                        vn.push(ev_train[qi][ng].as_array().to_vec());
                        w.push(wt);
                    }
                }
            }
            if arow.is_empty() {
                continue;
            }
            let qrows: Vec<Vec<f64>> = batch.iter().map(|&qi| q_train[qi].clone()).collect();
            let (loss, grads) = {
                let mut g = Graph::new(&model.store, Mode::Train, graph_seed(cfg.seed, 4, epoch, bi));
                let q = g.input(Tensor::from_rows(&qrows)?);
                let alpha = model.forward(&mut g, q)?;
                let a = g.gather_rows(alpha, &arow)?;
                let p = g.input(Tensor::from_rows(&vp)?);
                let ng = g.input(Tensor::from_rows(&vn)?);
                let sp = g.row_dot(a, p)?;
                let sn = g.row_dot(a, ng)?;
                let d = g.sub(sn, sp)?;
                let gamma = g.input(Tensor::row_vector(&[cfg.gamma]));
                let d = g.add_row(d, gamma)?;
                let h = g.relu(d);
                let wc = g.input(Tensor::col_vector(&w));
                let h = g.mul_col(h, wc)?;
                let loss = g.sum(h);
                (g.value(loss).scalar(), g.backward(loss)?)
            };
            opt.step(
                &mut model.store,
                &grads,
                linear_warmup_lr(step, total, sc.lr, sc.warmup_frac),
            );
            step += 1;
            sum += loss;
            n += 1;
        }
        log.loss_curve.push(if n > 0 { sum / n as f64 } else { 0.0 });
        if sel.enabled {
            let mut alphas = Vec::with_capacity(q_val.len());
            for q in &q_val {
                alphas.push(model.route(q)?);
            }
            let mrr = mrr_of(data, &data.val, |i, _| {
                ev_val[i].iter().map(|v| fuse_score(&alphas[i], v)).collect()
            });
            debug!(
                "router epoch {epoch}: loss {:.5} val mrr {mrr:.4}",
                log.loss_curve[epoch]
            );
            log.val_mrr.push(mrr);
            sel.offer(mrr, epoch, &model.store);
        }
    }
    sel.finish(&mut model.store, &mut log);
    Ok((model, log))
}
