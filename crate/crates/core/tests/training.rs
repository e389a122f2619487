// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtloc_core::corpus::Dataset;
use rtloc_core::encoders::{ModelConfig, Models};
use rtloc_core::synth::{generate, SynthConfig};
use rtloc_core::training::{
    constrained_batches, load_models, train, ModelManifest, Stage, StageConfig, TrainConfig, TrainError,
};

fn corpus() -> Dataset {
    generate(&SynthConfig {
        designs: 8,
        blocks_per_design: 14,
        motifs_per_design: 4,
        instances_per_family: 2,
        seed: 36,
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    let stage = |lr: f64, epochs: usize, negatives: usize| StageConfig {
        lr,
        batch_size: 8,
        epochs,
        warmup_frac: 0.1,
        negatives,
    };
    TrainConfig {
        model: ModelConfig {
            dim: 32,
            text_vocab: 1024,
            name_vocab: 256,
            local_hidden: 16,
            local_layers: 2,
            glide_hidden: 32,
            glide_layers: 1,
            edge_dim: 8,
            proj_dim: 16,
            router_hidden: 16,
            ..ModelConfig::default()
        },
        text: stage(2e-3, 5, 0),
        local: stage(2e-3, 3, 7),
        glide: stage(2e-3, 3, 15),
        router: stage(5e-3, 30, 4),
        ..TrainConfig::default()
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().to_string(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn full_pipeline_is_deterministic_and_learns() {
    let ds = corpus();
    assert!(ds.pair_count() >= 50, "{}", ds.pair_count());
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = train(a.path(), &ds, &Stage::ALL, &cfg, None).unwrap();
    train(b.path(), &ds, &Stage::ALL, &cfg, None).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(
        fa.keys().collect::<Vec<_>>(),
        vec![
            "manifest.json",
            "stage1.ckpt",
            "stage2.ckpt",
            "stage3.ckpt",
            "stage4.ckpt"
        ]
    );
    assert_eq!(fa, fb);

    for r in &ma.stages {
        let c = &r.log.loss_curve;
        assert!(c.last().unwrap() < c.first().unwrap(), "stage {}: {c:?}", r.stage);
    }
    let split = &ma.split;
    for p in split.parts() {
        assert!(!p.is_empty());
    }
    assert!(split.train.is_disjoint(&split.test) && split.train.is_disjoint(&split.val));

    let (models, manifest) = load_models(a.path()).unwrap();
    assert_eq!(manifest, ma);
    assert_eq!(models.text.store.digest(), ma.record(Stage::Text).unwrap().digest);
}

#[test]
fn later_stages_leave_earlier_checkpoints_alone() {
    let ds = corpus();
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &ds, &[Stage::Text, Stage::Local, Stage::Glide], &cfg, None).unwrap();
    let before = files(dir.path());
    assert!(!before.contains_key("stage4.ckpt"));
    let m = train(dir.path(), &ds, &[Stage::Router], &cfg, None).unwrap();
    let after = files(dir.path());
    for f in ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt"] {
        assert_eq!(before[f], after[f], "{f}");
    }
    assert_eq!(m.stages.len(), 4);

    // retraining the text stage invalidates everything downstream
    let m = train(dir.path(), &ds, &[Stage::Text], &cfg, None).unwrap();
    assert_eq!(m.stages.iter().map(|r| r.stage).collect::<Vec<_>>(), vec![Stage::Text]);
    assert!(matches!(
        load_models(dir.path()),
        Err(TrainError::MissingCheckpoint {
            missing: Stage::Local,
            ..
        })
    ));
}

#[test]
fn missing_and_mismatched_inputs_are_reported() {
    let ds = corpus();
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let e = train(dir.path(), &ds, &[Stage::Glide], &cfg, None).unwrap_err();
    assert!(
        matches!(
            e,
            TrainError::MissingCheckpoint {
                stage: Stage::Glide,
                missing: Stage::Text,
                ..
            }
        ),
        "{e}"
    );

    train(dir.path(), &ds, &[Stage::Text], &cfg, None).unwrap();
    let other = TrainConfig { seed: 7, ..cfg.clone() };
    assert!(matches!(
        train(dir.path(), &ds, &[Stage::Local], &other, None),
        Err(TrainError::ConfigMismatch(_))
    ));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        ModelManifest::load(empty.path()),
        Err(TrainError::MissingManifest(_))
    ));

    // a tampered checkpoint no longer matches the manifest
    let full = tempfile::tempdir().unwrap();
    train(full.path(), &ds, &Stage::ALL, &cfg, None).unwrap();
    let p = full.path().join("stage4.ckpt");
    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0x55;
    std::fs::write(&p, bytes).unwrap();
    assert!(load_models(full.path()).is_err());
}

#[test]
fn zero_epochs_keep_the_initialization() {
    let ds = corpus();
    let mut cfg = small_config();
    cfg.text.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let m = train(dir.path(), &ds, &[Stage::Text], &cfg, None).unwrap();
    let init = Models::new(cfg.model.clone(), cfg.seed);
    assert_eq!(m.record(Stage::Text).unwrap().digest, init.text.store.digest());
}

#[test]
fn stage_names_parse() {
    for s in Stage::ALL {
        assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        assert_eq!(s.number().to_string().parse::<Stage>().unwrap(), s);
    }
    assert!("all".parse::<Stage>().is_err());
}

#[test]
fn sampler_never_repeats_a_spec_within_a_batch() {
    // group id per pair: one spec with five positives, the rest singletons
    let mut groups = vec![0usize; 5];
    groups.extend(1..40);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batches = constrained_batches(&groups, 8, &mut rng);
    let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
    seen.sort();
    assert_eq!(seen, (0..groups.len()).collect::<Vec<_>>());
    for b in &batches {
        assert!(b.iter().filter(|&&i| groups[i] == 0).count() <= 1, "{b:?}");
    }
}
