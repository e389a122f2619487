// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rtloc_core::sv::{Snapshot, SourceFile};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sv")
}

/// Every `.sv`/`.v` file under the fixture corpus, paths relative to it.
pub fn corpus() -> Vec<SourceFile> {
    let root = fixture_dir();
    let mut out = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|x| x.to_str()), Some("sv" | "v")) {
                let rel = p.strip_prefix(&root).unwrap().to_string_lossy().replace('\\', "/");
                out.push(SourceFile::new(rel, std::fs::read_to_string(&p).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out
}

/// One snapshot per IP directory of the corpus.
pub fn ip_snapshots() -> Vec<Snapshot> {
    let mut by_ip: std::collections::BTreeMap<String, Vec<SourceFile>> = Default::default();
    for f in corpus() {
        by_ip.entry(f.ip_name.clone()).or_default().push(f);
    }
    by_ip
        .into_iter()
        .map(|(ip, files)| Snapshot::build(format!("{ip}@fixture"), files).unwrap())
        .collect()
}
