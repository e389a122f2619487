// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (uncaptured) and then asserts. The synthetic end-to-end run is shared
//! by the tests that need trained models.

#[path = "../../nn/tests/support/gradchecks.rs"]
mod gradchecks;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use rtloc_core::corpus::ChangeInstance;
use rtloc_core::graph::{build_block_dfg, DfgNode};
use rtloc_core::retrieval::eval::dtg_shape;
use rtloc_core::retrieval::metrics::Outcome;
use rtloc_core::retrieval::MetricsReport;
use rtloc_core::sv::{anonymize_snapshot, segment_blocks, BlockKind, Snapshot, SourceFile};
use rtloc_nn::loss::{infonce_listwise, margin_rank, mnrl};
use rtloc_nn::Tensor;

fn report(name: &str, ok: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Runs the binary, failing on a non-zero exit; returns stdout.
fn rtloc(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_rtloc"))
        .args(args)
        .arg("-q")
        .output()
        .expect("spawn rtloc");
    assert!(
        out.status.success(),
        "rtloc {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("JSON output")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

// ---------------------------------------------------------------- metrics

fn oracle_rr(r: &[String], gt: &BTreeSet<String>) -> f64 {
    for (i, b) in r.iter().enumerate() {
        if gt.contains(b) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn oracle_ap(r: &[String], gt: &BTreeSet<String>) -> f64 {
    let mut sum = 0.0;
    for i in 0..r.len() {
        if gt.contains(&r[i]) {
            let rel_in_prefix = r[..=i].iter().filter(|b| gt.contains(*b)).count();
            sum += rel_in_prefix as f64 / (i + 1) as f64;
        }
    }
    sum / gt.len() as f64
}

fn oracle_recall(r: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    gt.iter().filter(|g| r.iter().take(k).any(|b| b == *g)).count() as f64 / gt.len() as f64
}

fn oracle_hit(r: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    if oracle_recall(r, gt, k) > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[test]
fn metric_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::new();
    for q in 0..200 {
        let n = rng.random_range(1..40);
        let mut ranking: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
        ranking.shuffle(&mut rng);
        // some relevant items may be absent from the ranking
        let gt: BTreeSet<String> = (0..rng.random_range(1..6))
            .map(|_| format!("b{}", rng.random_range(0..n + 3)))
            .collect();
        cases.push((format!("q{q}"), ranking, gt));
    }
    let outcomes: Vec<Outcome> = cases
        .iter()
        .map(|(id, r, gt)| Outcome {
            query_id: id,
            ranking: r,
            gt,
        })
        .collect();
    let rep = MetricsReport::from_outcomes(&outcomes).unwrap();
    let mut mismatches = 0;
    let mut sums = [0.0f64; 8];
    for ((_, r, gt), got) in cases.iter().zip(&rep.per_query) {
        let want = [
            oracle_rr(r, gt),
            oracle_ap(r, gt),
            oracle_recall(r, gt, 1),
            oracle_recall(r, gt, 5),
            oracle_recall(r, gt, 10),
            oracle_hit(r, gt, 1),
            oracle_hit(r, gt, 5),
            oracle_hit(r, gt, 10),
        ];
        let have = [
            got.rr,
            got.ap,
            got.recall[0],
            got.recall[1],
            got.recall[2],
            got.hit[0],
            got.hit[1],
            got.hit[2],
        ];
        mismatches += want.iter().zip(&have).filter(|(a, b)| a != b).count();
        for (s, w) in sums.iter_mut().zip(want) {
            *s += w;
        }
    }
    let means = sums.map(|s| s / 200.0);
    mismatches += means.iter().zip(rep.row()).filter(|(a, b)| **a != *b).count();
    let secs = t0.elapsed().as_secs_f64();
    report(
        "metric oracles",
        mismatches == 0 && secs < 5.0,
        format!("200 instances, {mismatches} mismatching values, {secs:.3} s (limit 5 s)"),
    );
}

// ---------------------------------------------------------------- gradients

#[test]
fn gradient_integrity() {
    let t0 = Instant::now();
    let checks = gradchecks::all();
    let errs: Vec<(&str, f64)> = checks.iter().map(|c| (c.0, gradchecks::worst(c))).collect();
    let (worst_name, worst) = errs
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= gradchecks::TOL && secs < 30.0 && gradchecks::SHAPES >= 20;
    report(
        "gradient integrity",
        ok,
        format!(
            "{} checks x {} shapes, worst rel. err {worst:.2e} ({worst_name}), {secs:.2} s (limits 1e-6, 30 s)",
            checks.len(),
            gradchecks::SHAPES
        ),
    );
}

// ---------------------------------------------------------------- losses

#[test]
fn loss_closed_forms() {
    let m = mnrl(&Tensor::filled(4, 4, 0.3), 0.05).unwrap();
    let i = infonce_listwise(0.4, &[0.4; 4], 0.07).unwrap();
    let margins = [
        margin_rank(&[0.9], &[0.2], 0.5).unwrap(),
        margin_rank(&[0.2], &[0.9], 0.5).unwrap(),
        margin_rank(&[0.9, 0.1], &[0.5], 0.5).unwrap(),
    ];
    let hand = [0.0, 1.2, 0.5];
    let margin_ok = margins
        .iter()
        .zip(hand)
        .all(|(a, b)| (a - b).abs() <= 4.0 * f64::EPSILON);
    let ok = (m - 4f64.ln()).abs() <= 1e-9 && (i - 5f64.ln()).abs() <= 1e-9 && margin_ok;
    report(
        "loss closed forms",
        ok,
        format!(
            "mnrl k=4 {:.1e} from ln 4, infonce 5-way {:.1e} from ln 5, margin {margins:?} vs {hand:?}",
            (m - 4f64.ln()).abs(),
            (i - 5f64.ln()).abs()
        ),
    );
}

// ---------------------------------------------------------------- synthetic run

struct Run {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    models: PathBuf,
    models_again: PathBuf,
    eval: Vec<u8>,
    eval_again: Vec<u8>,
    masked_lexical: Value,
    end_to_end: Duration,
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let models = tmp.path().join("models");
        let models_again = tmp.path().join("models-again");
        let config = workspace().join("configs/synthetic.json");
        let t0 = Instant::now();
        rtloc(&["synth", "--out", s(&data), "--seed", "36"]);
        rtloc(&[
            "train",
            "--stage",
            "all",
            "--data",
            s(&data),
            "--models",
            s(&models),
            "--config",
            s(&config),
        ]);
        let eval = rtloc(&["eval", "--data", s(&data), "--models", s(&models)]);
        let end_to_end = t0.elapsed();
        let eval_again = rtloc(&["eval", "--data", s(&data), "--models", s(&models)]);
        rtloc(&[
            "train",
            "--stage",
            "all",
            "--data",
            s(&data),
            "--models",
            s(&models_again),
            "--config",
            s(&config),
        ]);
        let masked_lexical = json(&rtloc(&[
            "eval",
            "--data",
            s(&data),
            "--models",
            s(&models),
            "--family",
            "lexical",
            "--masked",
            "--methods",
            "bm25,glide",
        ]));
        Run {
            _tmp: tmp,
            data,
            models,
            models_again,
            eval,
            eval_again,
            masked_lexical,
            end_to_end,
        }
    })
}

fn mrr(report: &Value, method: &str) -> f64 {
    report["methods"][method]["mrr"].as_f64().expect("mrr")
}

#[test]
fn synthetic_end_to_end() {
    let r = run();
    let e = json(&r.eval);
    let fused = mrr(&e, "fused");
    let (best_name, best) = ["text", "local", "glide"]
        .into_iter()
        .map(|m| (m, mrr(&e, m)))
        .fold(("", f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let secs = r.end_to_end.as_secs_f64();
    report(
        "synthetic end-to-end",
        fused >= 0.80 && fused >= best - 0.02 && secs < 600.0,
        format!(
            "held-out fused MRR {fused:.3} (min 0.80), best single {best_name} {best:.3}, {} queries, {secs:.0} s",
            e["queries"]
        ),
    );
}

#[test]
fn router_specialization() {
    let e = json(&run().eval);
    let want = [("lexical", 0usize), ("structural", 1), ("topology", 2)];
    let names = ["text", "local", "glide"];
    let mut matched = 0;
    let mut parts = Vec::new();
    for (fam, expert) in want {
        let a: Vec<f64> = e["runs"][0]["families"][fam]["mean_alpha"]
            .as_array()
            .expect("family present")
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let arg = (0..3).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
        matched += usize::from(arg == expert);
        parts.push(format!("{fam}->{} [{:.2} {:.2} {:.2}]", names[arg], a[0], a[1], a[2]));
    }
    report(
        "router specialization",
        matched >= 2,
        format!("{matched}/3 families routed to their expert: {}", parts.join(", ")),
    );
}

fn fixture_corpus() -> Vec<SourceFile> {
    let root = workspace().join("crates/core/tests/fixtures/sv");
    let mut out = Vec::new();
    for e in sv_files(&root) {
        let rel = e.strip_prefix(&root).unwrap().to_string_lossy().replace('\\', "/");
        out.push(SourceFile::new(rel, std::fs::read_to_string(&e).unwrap()));
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out
}

fn sv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(sv_files(&p));
        } else if matches!(p.extension().and_then(|x| x.to_str()), Some("sv" | "v")) {
            out.push(p);
        }
    }
    out
}

/// Everything about a node except its name.
fn structural(n: &DfgNode) -> String {
    format!(
        "{} {:?} {:?} {:?} {:?}",
        n.node_id, n.kind, n.category, n.operator_type, n.bit_width
    )
}

#[test]
fn anonymization_robustness() {
    let files = fixture_corpus();
    let mut by_ip: BTreeMap<String, Vec<SourceFile>> = BTreeMap::new();
    for f in files {
        by_ip.entry(f.ip_name.clone()).or_default().push(f);
    }
    let (mut edges, mut nodes, mut identical) = (0, 0, true);
    for (ip, files) in by_ip {
        let snap = Snapshot::build(format!("{ip}@fixture"), files).unwrap();
        let (masked, _) = anonymize_snapshot(&snap).unwrap();
        let (a, b) = (dtg_shape(&snap), dtg_shape(&masked));
        identical &= a == b && snap.blocks.len() == masked.blocks.len();
        edges += a.len();
        for (x, y) in snap.blocks.iter().zip(&masked.blocks) {
            identical &= (x.kind, x.span.start_line, x.span.end_line) == (y.kind, y.span.start_line, y.span.end_line);
            let decls = |s: &Snapshot, m: &str| s.module(m).map(|m| m.decls.clone()).unwrap_or_default();
            let dx = build_block_dfg(x, &decls(&snap, &x.module_name), 4096);
            let dy = build_block_dfg(y, &decls(&masked, &y.module_name), 4096);
            identical &= dx.edges == dy.edges
                && dx.nodes.iter().map(structural).collect::<Vec<_>>()
                    == dy.nodes.iter().map(structural).collect::<Vec<_>>();
            nodes += dx.nodes.len();
        }
    }
    let m = &run().masked_lexical;
    let drop = |method: &str| m["runs"][0]["robustness"]["mrr_drop"][method].as_f64().expect("drop");
    let (bm25, glide) = (drop("bm25"), drop("glide"));
    let preserved = m["runs"][0]["robustness"]["dtg_preserved"].as_bool() == Some(true);
    report(
        "anonymization robustness",
        identical && preserved && bm25 > glide,
        format!(
            "fixture: {edges} DTG edges and {nodes} DFG nodes unchanged={identical}; synthetic identifier-citing \
             queries ({}): MRR drop bm25 {bm25:.3} vs glide {glide:.3}",
            m["queries"]
        ),
    );
}

// ---------------------------------------------------------------- miner

fn instance_blocks(dir: &Path, repo: &Path) -> BTreeMap<String, BTreeSet<String>> {
    let log = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["log", "--format=%H %s"])
        .output()
        .unwrap();
    let subjects: BTreeMap<String, String> = String::from_utf8(log.stdout)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(' ').map(|(h, s)| (h.to_string(), s.to_string())))
        .collect();
    std::fs::read_to_string(dir.join("instances.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let i: ChangeInstance = serde_json::from_str(l).unwrap();
            (subjects[&i.commit_id].clone(), i.affected_block_ids)
        })
        .collect()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn miner_fidelity() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = tmp.path().join("repo");
    let script = workspace().join("crates/core/tests/fixtures/miner_repo.sh");
    assert!(Command::new("sh").arg(script).arg(&repo).status().unwrap().success());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    rtloc(&["mine", "--repo", s(&repo), "--extractor", "fallback", "--out", s(&a)]);
    rtloc(&["mine", "--repo", s(&repo), "--extractor", "fallback", "--out", s(&b)]);
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let uart = "uart/rtl/uart_core.sv::uart_core";
    let expected: BTreeMap<String, BTreeSet<String>> = [
        (
            "Fix off-by-one in rx fifo watermark threshold",
            set(&[&format!("{uart}::assign::0")]),
        ),
        (
            "Report parity errors in the status register error bit",
            set(&[&format!("{uart}::assign::1"), &format!("{uart}::assign::2")]),
        ),
        (
            "Fix timeout counter reload value for the spi busy timer",
            set(&["spi/rtl/spi_ctrl.sv::spi_ctrl::always_ff::0"]),
        ),
        (
            "Derive the overflow status bit directly from the fifo level",
            set(&[&format!("{uart}::assign::2"), &format!("{uart}::assign::3")]),
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let got = instance_blocks(&a, &repo);
    let rejections: Vec<String> = std::fs::read_to_string(a.join("rejections.jsonl"))
        .unwrap()
        .lines()
        .map(|l| json(l.as_bytes())["reason"].as_str().unwrap().to_string())
        .collect();
    let mut sorted = rejections.clone();
    sorted.sort();
    let idempotent = dir_bytes(&a) == dir_bytes(&b);
    report(
        "miner fidelity",
        got == expected && sorted == ["label", "testbench_only"] && idempotent,
        format!(
            "{} instances (exact block sets: {}), rejections {rejections:?}, identical reruns: {idempotent}",
            got.len(),
            got == expected
        ),
    );
}

// ---------------------------------------------------------------- determinism

#[test]
fn determinism() {
    let r = run();
    let (a, b) = (dir_bytes(&r.models), dir_bytes(&r.models_again));
    let ckpts = a.keys().filter(|k| k.ends_with(".ckpt")).count();
    let same_models = a == b && ckpts == 4;
    let same_eval = r.eval == r.eval_again;
    report(
        "determinism",
        same_models && same_eval,
        format!(
            "train all x2: {} files ({ckpts} checkpoints) identical={same_models}; eval x2 identical={same_eval}",
            a.len()
        ),
    );
}

// ---------------------------------------------------------------- latency

#[test]
fn latency_envelope() {
    let r = run();
    let b = json(&rtloc(&[
        "bench",
        "--models",
        s(&r.models),
        "--data",
        s(&r.data),
        "--candidates",
        "10000",
        "--queries",
        "50",
    ]));
    let fused = b["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|row| row["method"] == "fused")
        .expect("fused row");
    let ms = fused["latency_ms"].as_f64().unwrap();
    let params = b["total_params"].as_u64().unwrap_or(0);
    report(
        "latency envelope",
        ms < 50.0 && params > 0 && b["candidates"] == 10_000,
        format!(
            "fused scoring of {} candidates {ms:.2} ms/query (limit 50), {params} parameters",
            b["candidates"]
        ),
    );
}

// ---------------------------------------------------------------- parser

#[test]
fn parser_fidelity() {
    let root = workspace().join("crates/core/tests/fixtures/sv");
    let truth: BTreeMap<String, [usize; 4]> = std::fs::read_to_string(root.join("counts.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let n = |i: usize| f[i].parse::<usize>().unwrap();
            (f[0].to_string(), [n(1), n(2), n(3), n(4)])
        })
        .collect();
    let files = fixture_corpus();
    let (mut count_ok, mut spans_ok, mut blocks) = (0, 0, 0);
    for f in &files {
        let bs = segment_blocks(f).unwrap();
        blocks += bs.len();
        let mut got = [0usize; 4];
        for b in &bs {
            got[match b.kind {
                BlockKind::Assign => 0,
                BlockKind::AlwaysFf => 1,
                BlockKind::AlwaysComb => 2,
                BlockKind::AlwaysGeneric => 3,
            }] += 1;
        }
        count_ok += usize::from(truth.get(&f.path) == Some(&got));
        // block texts plus the gaps between them rebuild the file
        let mut rebuilt = String::new();
        let mut cursor = 0;
        let mut ok = true;
        for b in &bs {
            let sp = b.span;
            ok &= sp.start_byte >= cursor && f.content.get(sp.start_byte..sp.end_byte) == Some(b.text.as_str());
            if !ok {
                break;
            }
            rebuilt.push_str(&f.content[cursor..sp.start_byte]);
            rebuilt.push_str(&b.text);
            cursor = sp.end_byte;
        }
        if ok {
            rebuilt.push_str(&f.content[cursor..]);
        }
        spans_ok += usize::from(ok && rebuilt == f.content);
    }
    let n = files.len();
    report(
        "parser fidelity",
        n == 20 && truth.len() == 20 && count_ok == n && spans_ok == n,
        format!("{n} files, {blocks} blocks, counts exact in {count_ok}/{n}, verbatim spans in {spans_ok}/{n}"),
    );
}
