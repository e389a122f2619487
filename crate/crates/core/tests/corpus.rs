// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeSet;

use rtloc_core::corpus::{flatten, read_jsonl, ChangeInstance, CorpusError, Dataset, DeltaSpec, Label, Pair};
use rtloc_core::encoders::{ModelConfig, Models};
use rtloc_core::retrieval::{evaluate, robustness_eval, Method};
use rtloc_core::synth::{generate, SynthConfig};

fn spec(intention: &str) -> DeltaSpec {
    DeltaSpec {
        label: Label::Functional,
        confidence: 0.9,
        rationale: "r".into(),
        context: String::new(),
        intention: intention.into(),
        s_old: "Old behavior.".into(),
        s_new: "New behavior.".into(),
    }
}

fn fixture_dataset() -> Dataset {
    let snaps = common::ip_snapshots();
    let uart = snaps
        .iter()
        .find(|s| s.snapshot_id.starts_with("uart"))
        .unwrap()
        .clone();
    let prim = snaps
        .iter()
        .find(|s| s.snapshot_id.starts_with("prim"))
        .unwrap()
        .clone();
    let ids = |s: &rtloc_core::sv::Snapshot, n: usize, skip: usize| -> BTreeSet<String> {
        s.blocks.iter().skip(skip).take(n).map(|b| b.block_id.clone()).collect()
    };
    let instances = vec![
        ChangeInstance {
            instance_id: "c1".into(),
            delta_spec: spec("Fix the tx_fifo_rready handshake"),
            affected_block_ids: ids(&uart, 3, 2),
            commit_id: "c1".into(),
            ip_name: "uart".into(),
            snapshot_id: uart.snapshot_id.clone(),
            family: None,
            pre_snapshot_id: None,
        },
        ChangeInstance {
            instance_id: "c2".into(),
            delta_spec: spec("Change mask_q reload in the arbiter"),
            affected_block_ids: ids(&prim, 2, 4),
            commit_id: "c2".into(),
            ip_name: "prim".into(),
            snapshot_id: prim.snapshot_id.clone(),
            family: Some("lexical".into()),
            pre_snapshot_id: None,
        },
    ];
    Dataset {
        snapshots: [uart, prim].into_iter().map(|s| (s.snapshot_id.clone(), s)).collect(),
        instances,
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = fixture_dataset();
    ds.validate().unwrap();
    let pairs = flatten(&ds.instances);
    assert_eq!(pairs.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let lines = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    assert_eq!((lines("instances.jsonl"), lines("pairs.jsonl")), (2, 5));
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    let read: Vec<Pair> = read_jsonl(&dir.path().join("pairs.jsonl")).unwrap();
    assert_eq!(read, pairs);
}

#[test]
fn dangling_references_are_rejected() {
    let mut ds = fixture_dataset();
    ds.instances[0].affected_block_ids.insert("nope".into());
    assert!(matches!(ds.validate(), Err(CorpusError::DanglingBlock(..))));
    let mut ds = fixture_dataset();
    ds.instances[1].snapshot_id = "ghost".into();
    assert!(matches!(ds.validate(), Err(CorpusError::MissingSnapshot(..))));

    let dir = tempfile::tempdir().unwrap();
    fixture_dataset().save(dir.path()).unwrap();
    std::fs::write(dir.path().join("instances.jsonl"), "{not json}\n").unwrap();
    assert!(matches!(
        Dataset::load(dir.path()),
        Err(CorpusError::Parse { line: 1, .. })
    ));
}

#[test]
fn masking_preserves_topology_and_never_helps_bm25() {
    let ds = fixture_dataset();
    let models = Models::new(ModelConfig::default(), 1);
    let before = (models.text.store.digest(), models.glide.store.digest());
    let inst: Vec<&ChangeInstance> = ds.instances.iter().collect();
    let r = robustness_eval(&ds, &inst, &models, &[Method::Bm25, Method::Glide]).unwrap();
    assert!(r.dtg_preserved);
    assert!(r.mrr_drop[&Method::Bm25] >= 0.0);
    assert_eq!(before, (models.text.store.digest(), models.glide.store.digest()));
}

#[test]
fn evaluation_is_repeatable() {
    let ds = generate(&SynthConfig {
        designs: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let models = Models::new(ModelConfig::default(), 2);
    let inst: Vec<&ChangeInstance> = ds.instances.iter().collect();
    let a = evaluate(&ds, &inst, &models, &Method::ALL).unwrap();
    let b = evaluate(&ds, &inst, &models, &Method::ALL).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.reports[&Method::Fused].queries, inst.len());
    // a lexical query naming its signals puts bm25 well above chance
    assert!(a.reports[&Method::Bm25].mrr > 0.3);
}
