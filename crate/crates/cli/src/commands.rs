// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use rtloc_core::corpus::{ChangeInstance, Dataset};
use rtloc_core::encoders::{Expert, ModelConfig, Models, ParamCounts};
use rtloc_core::graph::build_block_dfg;
use rtloc_core::miner::{build_extractor, emit_dataset, mine as mine_repo, ExtractorKind, MinerConfig, Reason};
use rtloc_core::retrieval::index::{encode_query, order, rank_with};
use rtloc_core::retrieval::{
    build_index, evaluate, format_table, ip_disjoint_split, rank, robustness_eval, Bm25Index, Bm25Params,
    FamilySummary, Method, MetricsReport, RobustnessReport, SnapshotIndex,
};
use rtloc_core::sv::anonymize_snapshot;
use rtloc_core::synth::{generate, SynthConfig};
use rtloc_core::training::{ip_pair_counts, load_models, train as train_stages, ModelManifest, Stage, TrainConfig};

use crate::args::*;
use crate::io::{emit_json, emit_jsonl, load_snapshot, read_json};
use crate::UsageError;

/// Recursive object merge; `patch` wins on conflicts.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the JSON file merged over them key by key, then flag
/// overrides.
fn resolve<T: Default + DeserializeOwned + Serialize>(file: Option<&Path>, flags: impl FnOnce(&mut T)) -> Result<T> {
    let mut cfg = match file {
        Some(p) => {
            let mut v = serde_json::to_value(T::default())?;
            merge(&mut v, read_json(p)?);
            serde_json::from_value(v)
                .map_err(|e| UsageError(format!("invalid configuration in {}: {e}", p.display())))?
        }
        None => T::default(),
    };
    flags(&mut cfg);
    info!("resolved config: {}", serde_json::to_string(&cfg)?);
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| UsageError(format!("{flag} is required")).into())
}

pub fn blocks(a: SourceArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let snap = load_snapshot(&a.src.inputs, &a.src.snapshot_id)?;
    info!("{} block(s) in {} file(s)", snap.blocks.len(), snap.files.len());
    emit_jsonl(&snap.blocks, a.out.as_deref())
}

pub fn dfg(a: DfgArgs) -> Result<()> {
    info!("arguments: {a:?}");
    if a.vocab == 0 {
        return Err(UsageError("--vocab must be positive".into()).into());
    }
    let snap = load_snapshot(&a.src.inputs, &a.src.snapshot_id)?;
    let empty = BTreeMap::new();
    let graphs = snap.blocks.iter().map(|b| {
        let decls = snap.module(&b.module_name).map_or(&empty, |m| &m.decls);
        build_block_dfg(b, decls, a.vocab)
    });
    emit_jsonl(graphs, a.out.as_deref())
}

pub fn dtg(a: SourceArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let snap = load_snapshot(&a.src.inputs, &a.src.snapshot_id)?;
    let g = rtloc_core::graph::build_dtg(&snap);
    let st = g.stats();
    eprintln!("{} block(s), {} edge(s)", st.nodes, st.edges);
    emit_json(&g, a.out.as_deref())
}

pub fn anonymize(a: SourceArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let snap = load_snapshot(&a.src.inputs, &a.src.snapshot_id)?;
    let (masked, map) = anonymize_snapshot(&snap)?;
    info!("{} identifier(s) renamed", map.len());
    match a.out {
        Some(dir) => {
            for f in &masked.files {
                // never leave `dir`, whatever the input path looked like
                let rel: PathBuf = Path::new(&f.path)
                    .components()
                    .filter(|c| matches!(c, Component::Normal(_)))
                    .collect();
                let path = dir.join(rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                }
                fs::write(&path, &f.content).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        None => emit_jsonl(&masked.files, None),
    }
}

#[derive(Serialize)]
struct MineSummary {
    commits_scanned: usize,
    instances: usize,
    pairs: usize,
    snapshots: usize,
    rejections: BTreeMap<&'static str, usize>,
}

pub fn mine(a: MineArgs) -> Result<()> {
    let cfg: MinerConfig = resolve(a.config.as_deref(), |c: &mut MinerConfig| {
        match a.extractor {
            Some(ExtractorArg::Remote) => c.extractor = ExtractorKind::Remote,
            Some(ExtractorArg::Fallback) => c.extractor = ExtractorKind::Fallback,
            None => {}
        }
        if a.endpoint.is_some() {
            c.endpoint = a.endpoint.clone();
        }
        c.fallback_on_error |= a.fallback_on_error;
        if let Some(m) = a.min_confidence {
            c.qc.min_confidence = m;
        }
    })?;
    if a.dump_config {
        return emit_json(&cfg, None);
    }
    if cfg.extractor == ExtractorKind::Remote && cfg.endpoint.is_none() {
        return Err(UsageError("--extractor remote needs --endpoint".into()).into());
    }
    if !(0.0..=1.0).contains(&cfg.qc.min_confidence) {
        return Err(UsageError("--min-confidence must lie in [0, 1]".into()).into());
    }
    let out_dir = required(&a.out, "--out")?;
    let extractor = build_extractor(&cfg)?;
    let out = mine_repo(&a.repo, &cfg, extractor.as_ref())?;
    emit_dataset(&out, out_dir)?;
    let mut rejections: BTreeMap<&'static str, usize> = BTreeMap::new();
    for r in &out.rejections {
        *rejections.entry(Reason::as_str(r.reason)).or_default() += 1;
    }
    emit_json(
        &MineSummary {
            commits_scanned: out.commits_scanned,
            instances: out.dataset.instances.len(),
            pairs: out.dataset.pair_count(),
            snapshots: out.dataset.snapshots.len(),
            rejections,
        },
        None,
    )
}

pub fn split(a: SplitArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let ds = Dataset::load(&a.data)?;
    let ratios = [a.ratios[0], a.ratios[1], a.ratios[2]];
    let s = ip_disjoint_split(&ip_pair_counts(&ds), ratios, a.seed)?;
    emit_json(&s, a.out.as_deref())
}

#[derive(Serialize)]
struct DatasetSummary {
    snapshots: usize,
    instances: usize,
    pairs: usize,
    ips: usize,
}

fn summary(ds: &Dataset) -> DatasetSummary {
    DatasetSummary {
        snapshots: ds.snapshots.len(),
        instances: ds.instances.len(),
        pairs: ds.pair_count(),
        ips: ds.ips().len(),
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = resolve(a.config.as_deref(), |c: &mut SynthConfig| {
        if let Some(d) = a.designs {
            c.designs = d;
        }
        if let Some(b) = a.blocks_per_design {
            c.blocks_per_design = b;
        }
        if let Some(s) = a.seed {
            c.seed = s;
        }
    })?;
    if a.dump_config {
        return emit_json(&cfg, None);
    }
    let out = required(&a.out, "--out")?;
    let ds = generate(&cfg)?;
    ds.save(out)?;
    emit_json(&summary(&ds), None)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg: TrainConfig = resolve(a.config.as_deref(), |c: &mut TrainConfig| {
        if let Some(s) = a.seed {
            c.seed = s;
        }
    })?;
    if a.dump_config {
        return emit_json(&cfg, None);
    }
    let (data, models) = (required(&a.data, "--data")?, required(&a.models, "--models")?);
    let stages: Vec<Stage> = match a.stage {
        StageArg::All => Stage::ALL.to_vec(),
        StageArg::Text => vec![Stage::Text],
        StageArg::Local => vec![Stage::Local],
        StageArg::Glide => vec![Stage::Glide],
        StageArg::Router => vec![Stage::Router],
    };
    let ds = Dataset::load(data)?;
    info!(
        "dataset: {} instance(s), {} pair(s)",
        ds.instances.len(),
        ds.pair_count()
    );
    let manifest = train_stages(models, &ds, &stages, &cfg, None)?;
    for r in &manifest.stages {
        let last = r.log.loss_curve.last().copied().unwrap_or(f64::NAN);
        eprintln!(
            "{:<7} final loss {last:.4}  kept epoch {:?}  {}",
            r.stage.as_str(),
            r.log.best_epoch,
            r.digest
        );
    }
    emit_json(&manifest, None)
}

pub fn index(a: IndexArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let (models, _) = load_models(&a.models)?;
    let snap = match (&a.data, &a.snapshot) {
        (Some(data), Some(id)) => {
            let mut ds = Dataset::load(data)?;
            match ds.snapshots.remove(id) {
                Some(s) => s,
                None => {
                    let known: Vec<&String> = ds.snapshots.keys().collect();
                    anyhow::bail!("dataset has no snapshot {id:?}; known: {known:?}");
                }
            }
        }
        _ => load_snapshot(&a.inputs, &a.snapshot_id)?,
    };
    let idx = build_index(&snap, &models)?;
    info!("indexed {} block(s)", idx.len());
    emit_json(&idx, a.out.as_deref())
}

pub fn query(a: QueryArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let (models, _) = load_models(&a.models)?;
    let idx: SnapshotIndex = read_json(&a.index)?;
    idx.check(&models)?;
    let mut res = rank("query", &a.query, &idx, &models)?;
    res.entries.truncate(a.top);
    let [at, al, ag] = res.alpha;
    eprintln!("alpha  text {at:.3}  local {al:.3}  glide {ag:.3}");
    eprintln!(
        "{:>4} {:>8} {:>8} {:>8} {:>8}  block",
        "rank", "fused", "text", "local", "glide"
    );
    for (i, e) in res.entries.iter().enumerate() {
        let v = e.evidence;
        eprintln!(
            "{:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  {}",
            i + 1,
            e.score,
            v.s_txt,
            v.s_loc,
            v.s_glob,
            e.block_id
        );
    }
    emit_json(&res, None)
}

#[derive(Serialize)]
struct SeedRun {
    seed: u64,
    families: BTreeMap<String, FamilySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    robustness: Option<RobustnessReport>,
}

#[derive(Serialize)]
struct EvalReport {
    split: String,
    family: Option<String>,
    queries: usize,
    methods: BTreeMap<Method, MetricsReport>,
    runs: Vec<SeedRun>,
}

fn eval_instances<'a>(ds: &'a Dataset, m: &ModelManifest, a: &EvalArgs) -> Vec<&'a ChangeInstance> {
    let ips: Option<&BTreeSet<String>> = match a.split {
        SplitPart::Train => Some(&m.split.train),
        SplitPart::Val => Some(&m.split.val),
        SplitPart::Test => Some(&m.split.test),
        SplitPart::All => None,
    };
    ds.instances
        .iter()
        .filter(|i| ips.map_or(true, |s| s.contains(&i.ip_name)))
        .filter(|i| a.family.is_none() || i.family == a.family)
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    info!("arguments: {a:?}");
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| UsageError(e.to_string()).into()))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::load(&a.data)?;
    let dirs: Vec<PathBuf> = if a.seeds.is_empty() {
        vec![a.models.clone()]
    } else {
        a.seeds.iter().map(|s| a.models.join(format!("seed-{s}"))).collect()
    };
    let mut runs = Vec::new();
    let mut reports: BTreeMap<Method, Vec<MetricsReport>> = BTreeMap::new();
    let mut queries = 0;
    for dir in &dirs {
        let (models, manifest) = load_models(dir)?;
        let inst = eval_instances(&ds, &manifest, &a);
        if inst.is_empty() {
            anyhow::bail!("no instances to evaluate in {}", dir.display());
        }
        queries = inst.len();
        let run = evaluate(&ds, &inst, &models, &methods)?;
        let robustness = if a.masked {
            Some(robustness_eval(&ds, &inst, &models, &methods)?)
        } else {
            None
        };
        for (m, r) in &run.reports {
            reports.entry(*m).or_default().push(r.clone());
        }
        runs.push(SeedRun {
            seed: manifest.seed,
            families: run.by_family(),
            robustness,
        });
    }
    let methods: BTreeMap<Method, MetricsReport> = reports
        .into_iter()
        .filter_map(|(m, rs)| MetricsReport::average(&rs).map(|r| (m, r)))
        .collect();
    let rows: Vec<(String, &MetricsReport)> = methods.iter().map(|(m, r)| (m.to_string(), r)).collect();
    eprint!("{}", format_table(&rows));
    for run in &runs {
        if let Some(r) = &run.robustness {
            for (m, d) in &r.mrr_drop {
                eprintln!("seed {} {m}: masked MRR drop {d:.4}", run.seed);
            }
            eprintln!("seed {} topology preserved: {}", run.seed, r.dtg_preserved);
        }
    }
    let split = format!("{:?}", a.split).to_lowercase();
    emit_json(
        &EvalReport {
            split,
            family: a.family.clone(),
            queries,
            methods,
            runs,
        },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct BenchRow {
    method: Method,
    params: usize,
    params_m: f64,
    latency_ms: f64,
    latency_ms_max: f64,
}

#[derive(Serialize)]
struct BenchReport {
    candidates: usize,
    queries: usize,
    parallel: bool,
    trained: bool,
    params: ParamCounts,
    total_params: usize,
    rows: Vec<BenchRow>,
}

fn time_queries(texts: &[String], mut f: impl FnMut(&str) -> Result<()>) -> Result<(f64, f64)> {
    let mut times = Vec::with_capacity(texts.len());
    for t in texts {
        let t0 = Instant::now();
        f(t)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Ok((mean, times.iter().copied().fold(0.0, f64::max)))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    info!("arguments: {a:?}");
    if a.candidates == 0 || a.queries == 0 {
        return Err(UsageError("--candidates and --queries must be positive".into()).into());
    }
    let (models, trained) = match &a.models {
        Some(dir) => (load_models(dir)?.0, true),
        None => (Models::new(ModelConfig::default(), 36), false),
    };
    let ds = match &a.data {
        Some(d) => Dataset::load(d)?,
        None => generate(&SynthConfig::default())?,
    };
    let parts = ds
        .snapshots
        .values()
        .map(|s| build_index(s, &models))
        .collect::<Result<Vec<_>, _>>()?;
    let idx = SnapshotIndex::tiled(&parts, a.candidates)?;
    let texts: HashMap<&str, &str> = ds
        .snapshots
        .values()
        .flat_map(|s| s.blocks.iter().map(|b| (b.block_id.as_str(), b.text.as_str())))
        .collect();
    let docs: Vec<&str> = idx
        .block_ids
        .iter()
        .map(|id| texts[id.split('#').next().unwrap_or(id)])
        .collect();
    let bm25 = Bm25Index::new(&docs, Bm25Params::default());
    let queries: Vec<String> = ds
        .instances
        .iter()
        .map(|i| i.query_text())
        .cycle()
        .take(a.queries)
        .collect();
    if queries.is_empty() {
        anyhow::bail!("dataset has no instances to use as queries");
    }
    info!("{} candidate(s), {} quer(ies)", idx.len(), queries.len());
    let p = models.num_params();
    let rescale = models.config.minmax_evidence;
    let mut rows = Vec::new();
    let mut row = |method: Method, params: usize, lat: (f64, f64)| {
        rows.push(BenchRow {
            method,
            params,
            params_m: params as f64 / 1e6,
            latency_ms: lat.0,
            latency_ms_max: lat.1,
        })
    };
    row(
        Method::Bm25,
        0,
        time_queries(&queries, |q| {
            let s = bm25.scores(q);
            std::hint::black_box(order(&idx.block_ids, &s));
            Ok(())
        })?,
    );
    let experts = [
        (Method::Text, Expert::Text, p.text),
        (Method::Local, Expert::Local, p.text + p.local),
        (Method::Glide, Expert::Glide, p.text + p.local + p.glide),
    ];
    for (method, expert, params) in experts {
        let lat = time_queries(&queries, |q| {
            let qv = encode_query(q, &models)?;
            std::hint::black_box(rank_with("bench", &qv, expert.basis(), &idx, rescale));
            Ok(())
        })?;
        row(method, params, lat);
    }
    let lat = time_queries(&queries, |q| {
        std::hint::black_box(rank("bench", q, &idx, &models)?);
        Ok(())
    })?;
    row(Method::Fused, p.total(), lat);
    eprintln!("{:<8} {:>12} {:>14}", "model", "params (M)", "latency (ms)");
    for r in &rows {
        eprintln!("{:<8} {:>12.3} {:>14.3}", r.method.as_str(), r.params_m, r.latency_ms);
    }
    emit_json(
        &BenchReport {
            candidates: idx.len(),
            queries: queries.len(),
            parallel: rtloc_core::par::is_parallel(),
            trained,
            params: p,
            total_params: p.total(),
            rows,
        },
        a.out.as_deref(),
    )
}
