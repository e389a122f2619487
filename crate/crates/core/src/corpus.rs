// SPDX-License-Identifier: Apache-2.0

//! Change requests, their ground-truth block sets, and the on-disk dataset
//! layout shared by the miner, the synthetic generator and the trainer:
//!
//! ```text
//! DIR/instances.jsonl        one ChangeInstance per line
//! DIR/pairs.jsonl            one (query, block) pair per line
//! DIR/snapshots/<id>.json    the Snapshot each instance is resolved against
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sv::Snapshot;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("instance {0} references unknown snapshot {1}")]
    MissingSnapshot(String, String),
    #[error("instance {0} references unknown block {1}")]
    DanglingBlock(String, String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Functional,
    NonFunctional,
    Unclear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSpec {
    pub label: Label,
    pub confidence: f64,
    pub rationale: String,
    pub context: String,
    pub intention: String,
    pub s_old: String,
    pub s_new: String,
}

impl DeltaSpec {
    /// Retrieval query: the non-empty descriptive fields joined by spaces.
    pub fn query_text(&self) -> String {
        [&self.context, &self.intention, &self.s_old, &self.s_new]
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeInstance {
    pub instance_id: String,
    pub delta_spec: DeltaSpec,
    pub affected_block_ids: BTreeSet<String>,
    pub commit_id: String,
    pub ip_name: String,
    /// Snapshot the block ids resolve against.
    pub snapshot_id: String,
    /// Optional grouping tag (the synthetic generator records its cue family).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Pre-revision snapshot, present when some blocks exist only there
    /// (deleted by the change).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_snapshot_id: Option<String>,
}

impl ChangeInstance {
    pub fn query_text(&self) -> String {
        self.delta_spec.query_text()
    }

    /// Every snapshot the instance's block ids may resolve against.
    pub fn snapshot_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.snapshot_id.as_str()).chain(self.pre_snapshot_id.as_deref())
    }
}

/// One flattened (query, block) supervision pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub instance_id: String,
    pub query: String,
    pub block_id: String,
    pub snapshot_id: String,
    pub ip_name: String,
}

pub fn flatten(instances: &[ChangeInstance]) -> Vec<Pair> {
    instances
        .iter()
        .flat_map(|i| {
            let q = i.query_text();
            i.affected_block_ids.iter().map(move |b| Pair {
                instance_id: i.instance_id.clone(),
                query: q.clone(),
                block_id: b.clone(),
                snapshot_id: i.snapshot_id.clone(),
                ip_name: i.ip_name.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub snapshots: BTreeMap<String, Snapshot>,
    pub instances: Vec<ChangeInstance>,
}

pub fn snapshot_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for it in items {
        let line = serde_json::to_string(it).expect("serializable");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        let snap_dir = dir.join("snapshots");
        fs::create_dir_all(&snap_dir).map_err(io_err(&snap_dir))?;
        for (id, s) in &self.snapshots {
            let p = snap_dir.join(snapshot_file_name(id));
            let bytes = serde_json::to_vec(s).expect("serializable");
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
        write_jsonl(&dir.join("instances.jsonl"), &self.instances)?;
        write_jsonl(&dir.join("pairs.jsonl"), &flatten(&self.instances))
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let instances: Vec<ChangeInstance> = read_jsonl(&dir.join("instances.jsonl"))?;
        let mut snapshots = BTreeMap::new();
        let wanted: BTreeSet<&str> = instances.iter().flat_map(|i| i.snapshot_ids()).collect();
        let snap_dir = dir.join("snapshots");
        for id in wanted {
            let p = snap_dir.join(snapshot_file_name(id));
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            let s: Snapshot = serde_json::from_slice(&bytes).map_err(|e| CorpusError::Parse {
                path: p.clone(),
                line: 1,
                msg: e.to_string(),
            })?;
            snapshots.insert(id.to_string(), s);
        }
        let ds = Dataset { snapshots, instances };
        ds.validate()?;
        Ok(ds)
    }

    /// Every instance resolves to snapshots that contain all its blocks.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for i in &self.instances {
            let mut ids: BTreeSet<&str> = BTreeSet::new();
            for sid in i.snapshot_ids() {
                let s = self
                    .snapshots
                    .get(sid)
                    .ok_or_else(|| CorpusError::MissingSnapshot(i.instance_id.clone(), sid.to_string()))?;
                ids.extend(s.blocks.iter().map(|b| b.block_id.as_str()));
            }
            if let Some(b) = i.affected_block_ids.iter().find(|b| !ids.contains(b.as_str())) {
                return Err(CorpusError::DanglingBlock(i.instance_id.clone(), b.clone()));
            }
        }
        Ok(())
    }

    /// The subset whose instances fall in `ips`, keeping only the snapshots
    /// they reference.
    pub fn restrict(&self, ips: &BTreeSet<String>) -> Dataset {
        let instances: Vec<ChangeInstance> = self
            .instances
            .iter()
            .filter(|i| ips.contains(&i.ip_name))
            .cloned()
            .collect();
        let wanted: BTreeSet<&str> = instances.iter().flat_map(|i| i.snapshot_ids()).collect();
        Dataset {
            snapshots: self
                .snapshots
                .iter()
                .filter(|(k, _)| wanted.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            instances,
        }
    }

    pub fn ips(&self) -> BTreeSet<String> {
        self.instances.iter().map(|i| i.ip_name.clone()).collect()
    }

    pub fn pair_count(&self) -> usize {
        self.instances.iter().map(|i| i.affected_block_ids.len()).sum()
    }
}
