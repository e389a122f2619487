// SPDX-License-Identifier: Apache-2.0

//! Data-parallel paths against the sequential fallback.
//!
//! `cargo bench -p rtloc-core` measures the rayon build, both on the global
//! pool (`parallel`) and pinned to one worker (`rayon-1`);
//! `cargo bench -p rtloc-core --no-default-features` measures the plain
//! iterator fallback (`sequential`). Results land under the same group
//! names so criterion's report shows them side by side.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rtloc_core::corpus::Dataset;
use rtloc_core::encoders::{ModelConfig, Models, PreparedSnapshot};
use rtloc_core::graph::build_dtg;
use rtloc_core::retrieval::{evaluate, Method};
use rtloc_core::sv::{Snapshot, SourceFile};
use rtloc_core::synth::{generate, SynthConfig};

fn corpus() -> Dataset {
    generate(&SynthConfig {
        designs: 12,
        ..SynthConfig::default()
    })
    .expect("synthetic corpus")
}

/// Runs `f` under every execution mode this build supports.
fn modes(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
        g.bench_function(BenchmarkId::from_parameter("rayon-1"), |b| b.iter(|| one.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&f));
    g.finish();
}

fn parse(c: &mut Criterion) {
    let ds = corpus();
    let files: Vec<SourceFile> = ds.snapshots.values().flat_map(|s| s.files.clone()).collect();
    modes(c, "snapshot_build", || {
        black_box(Snapshot::build("bench", files.clone()).unwrap());
    });
}

fn graphs(c: &mut Criterion) {
    let ds = corpus();
    let cfg = ModelConfig::default();
    let snaps: Vec<&Snapshot> = ds.snapshots.values().collect();
    modes(c, "dtg", || {
        for s in &snaps {
            black_box(build_dtg(s));
        }
    });
    modes(c, "prepare", || {
        for s in &snaps {
            black_box(PreparedSnapshot::new(s, &cfg));
        }
    });
}

fn encode(c: &mut Criterion) {
    let ds = corpus();
    let models = Models::new(ModelConfig::default(), 36);
    let prepared: Vec<PreparedSnapshot> = ds
        .snapshots
        .values()
        .map(|s| PreparedSnapshot::new(s, &models.config))
        .collect();
    modes(c, "embed_snapshots", || {
        for p in &prepared {
            black_box(models.embed_snapshot(p).unwrap());
        }
    });
    let inst: Vec<_> = ds.instances.iter().collect();
    modes(c, "evaluate", || {
        black_box(evaluate(&ds, &inst, &models, &Method::ALL).unwrap());
    });
}

criterion_group!(benches, parse, graphs, encode);
criterion_main!(benches);
