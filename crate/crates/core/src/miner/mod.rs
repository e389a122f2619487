// SPDX-License-Identifier: Apache-2.0

//! Mining (change request, affected blocks) instances from git history.
//!
//! Per first-parent commit: keep touched design files that are not
//! testbenches or generated, extract a [`DeltaSpec`] from the scrubbed
//! message, run the specification rules, map the line diff of each touched
//! file onto the blocks of both revisions, then the block-set rules. One
//! instance is emitted per (commit, IP).

pub mod diff;
pub mod extract;
mod git;
pub mod qc;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use log::{debug, info};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, ChangeInstance, CorpusError, Dataset};
use crate::sv::{ip_of, is_design_path, is_testbench_or_generated, parse_file, ParsedFile, Snapshot, SourceFile};

pub use diff::{compute_hunks, correspond, map_hunks_to_blocks, token_overlap, DiffHunk, MappedBlocks};
pub use extract::{
    parse_completion, ExtractError, Extractor, ExtractorKind, RemoteExtractor, RuleExtractor, WithFallback,
    SYSTEM_PROMPT,
};
pub use git::{ChangeKind, GitRepo};
pub use qc::{qc_blocks, qc_filter, qc_spec, QcConfig, Reason};

#[derive(Debug, thiserror::Error)]
pub enum MinerError {
    #[error("repository access failed: {0}")]
    RepoAccess(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub commit_id: String,
    pub parent_id: String,
    /// Scrubbed of sign-off style trailers, e-mail addresses and @-mentions.
    pub message: String,
    /// Touched design files (testbenches and generated files excluded).
    pub touched: Vec<(ChangeKind, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub commit_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_name: Option<String>,
    pub reason: Reason,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub extractor: ExtractorKind,
    pub endpoint: Option<String>,
    /// Use the keyword rules when the endpoint cannot be reached.
    pub fallback_on_error: bool,
    pub timeout_secs: u64,
    pub qc: QcConfig,
    /// Token overlap for matching a block across revisions when its ordinal
    /// moved.
    pub min_overlap: f64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            extractor: ExtractorKind::Fallback,
            endpoint: None,
            fallback_on_error: false,
            timeout_secs: 60,
            qc: QcConfig::default(),
            min_overlap: 0.6,
        }
    }
}

/// Removes trailer lines (Signed-off-by and friends), e-mail addresses and
/// @-mentions.
pub fn scrub_message(message: &str) -> String {
    let trailer = Regex::new(
        r"(?i)^\s*(signed-off-by|reviewed-by|co-authored-by|acked-by|tested-by|reported-by|suggested-by|helped-by|cc)\s*:",
    )
    .expect("static regex");
    let email = Regex::new(r"<?[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,}>?").expect("static regex");
    let mention = Regex::new(r"(^|[^A-Za-z0-9_])@[A-Za-z0-9_\-]+").expect("static regex");
    let lines: Vec<String> = message
        .lines()
        .filter(|l| !trailer.is_match(l))
        .map(|l| {
            let l = email.replace_all(l, "");
            mention.replace_all(&l, "$1").trim_end().to_string()
        })
        .collect();
    lines.join("\n").trim().to_string()
}

fn decode(path: &str, bytes: Vec<u8>) -> Option<SourceFile> {
    SourceFile::from_bytes(path, bytes).ok()
}

/// First-parent commits that touch at least one design file, plus the
/// commits excluded on the way. The root commit has no parent to diff
/// against and is skipped.
pub fn scan_history(repo: &GitRepo) -> Result<(Vec<CommitRecord>, Vec<Rejection>), MinerError> {
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for commit in repo.first_parent_history()? {
        let Some(parent) = repo.first_parent(&commit)? else {
            continue;
        };
        let changed = repo.changed_files(&parent, &commit)?;
        let mut sv = 0;
        let mut touched = Vec::new();
        for (kind, path) in changed {
            if !is_design_path(&path) {
                continue;
            }
            sv += 1;
            let rev = if kind == ChangeKind::Deleted { &parent } else { &commit };
            let content = String::from_utf8_lossy(&repo.show(rev, &path)?).into_owned();
            if !is_testbench_or_generated(&path, &content) {
                touched.push((kind, path));
            }
        }
        if touched.is_empty() {
            let (reason, detail) = if sv == 0 {
                (Reason::NoDesignFiles, "no .sv/.svh file touched".to_string())
            } else {
                (
                    Reason::TestbenchOnly,
                    format!("{sv} testbench or generated file(s) only"),
                )
            };
            rejected.push(Rejection {
                commit_id: commit,
                ip_name: None,
                reason,
                detail,
            });
            continue;
        }
        records.push(CommitRecord {
            message: scrub_message(&repo.message(&commit)?),
            commit_id: commit,
            parent_id: parent,
            touched,
        });
    }
    Ok((records, rejected))
}

type Parsed = Option<Arc<(SourceFile, Option<ParsedFile>)>>;

/// Design files keyed by (commit, path) with their parse; `None` marks
/// files that are not UTF-8.
#[derive(Default)]
struct FileCache {
    map: RwLock<HashMap<(String, String), Parsed>>,
}

impl FileCache {
    fn get(&self, repo: &GitRepo, commit: &str, path: &str) -> Result<Parsed, MinerError> {
        let key = (commit.to_string(), path.to_string());
        if let Some(v) = self.map.read().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let parsed = decode(path, repo.show(commit, path)?).map(|f| {
            let p = parse_file(&f).ok();
            Arc::new((f, p))
        });
        self.map.write().expect("cache lock").insert(key, parsed.clone());
        Ok(parsed)
    }
}

fn short(commit: &str) -> &str {
    &commit[..commit.len().min(12)]
}

/// Design files of `ip` at `commit`, parsed, as a snapshot.
fn ip_snapshot(
    repo: &GitRepo,
    cache: &FileCache,
    commit: &str,
    ip: &str,
) -> Result<Result<Snapshot, String>, MinerError> {
    let mut files = Vec::new();
    let mut blocks = Vec::new();
    let mut modules = Vec::new();
    for path in repo.files_at(commit)? {
        if !is_design_path(&path) || ip_of(&path) != ip {
            continue;
        }
        let Some(p) = cache.get(repo, commit, &path)? else {
            return Ok(Err(format!("{path} is not UTF-8 at {}", short(commit))));
        };
        if is_testbench_or_generated(&path, &p.0.content) {
            continue;
        }
        let Some(parsed) = &p.1 else {
            return Ok(Err(format!("{path} does not parse at {}", short(commit))));
        };
        files.push(p.0.clone());
        blocks.extend(parsed.blocks.iter().cloned());
        modules.extend(parsed.modules.iter().cloned());
    }
    Ok(Ok(Snapshot {
        snapshot_id: format!("{ip}@{}", short(commit)),
        files,
        blocks,
        modules,
    }))
}

enum Outcome {
    Accepted(ChangeInstance, Vec<Snapshot>),
    Rejected(Rejection),
}

fn mine_ip(
    repo: &GitRepo,
    cache: &FileCache,
    rec: &CommitRecord,
    ip: &str,
    paths: &[&(ChangeKind, String)],
    spec: &crate::corpus::DeltaSpec,
    cfg: &MinerConfig,
) -> Result<Outcome, MinerError> {
    let reject = |reason: Reason, detail: String| {
        Ok(Outcome::Rejected(Rejection {
            commit_id: rec.commit_id.clone(),
            ip_name: Some(ip.to_string()),
            reason,
            detail,
        }))
    };
    let post = match ip_snapshot(repo, cache, &rec.commit_id, ip)? {
        Ok(s) => s,
        Err(e) => return reject(Reason::ParseError, e),
    };
    let pre = match ip_snapshot(repo, cache, &rec.parent_id, ip)? {
        Ok(s) => s,
        Err(e) => return reject(Reason::ParseError, e),
    };
    let mut post_ids = BTreeSet::new();
    let mut pre_only = BTreeSet::new();
    for (kind, path) in paths.iter().map(|p| (p.0, p.1.as_str())) {
        let content = |s: &Snapshot| {
            s.files
                .iter()
                .find(|f| f.path == path)
                .map(|f| f.content.clone())
                .unwrap_or_default()
        };
        let old = if kind == ChangeKind::Added {
            String::new()
        } else {
            content(&pre)
        };
        let new = if kind == ChangeKind::Deleted {
            String::new()
        } else {
            content(&post)
        };
        let hunks = compute_hunks(path, &old, &new);
        let pre_blocks: Vec<_> = pre.blocks.iter().filter(|b| b.path == path).cloned().collect();
        let post_blocks: Vec<_> = post.blocks.iter().filter(|b| b.path == path).cloned().collect();
        match map_hunks_to_blocks(&hunks, &pre_blocks, &post_blocks, cfg.min_overlap) {
            Ok(m) => {
                post_ids.extend(m.post);
                pre_only.extend(m.pre_only);
            }
            Err(h) => {
                return reject(
                    Reason::UnmappedHunk,
                    format!(
                        "{path}: -{},{} +{},{} touches no block",
                        h.old_start, h.old_lines, h.new_start, h.new_lines
                    ),
                )
            }
        }
    }
    let all: BTreeSet<String> = post_ids.iter().chain(&pre_only).cloned().collect();
    if let Err(r) = qc_blocks(&all, &cfg.qc) {
        return reject(r, format!("{} block(s)", all.len()));
    }
    let mut snaps = vec![post.clone()];
    let pre_snapshot_id = (!pre_only.is_empty()).then(|| {
        snaps.push(pre.clone());
        pre.snapshot_id.clone()
    });
    let multi_ip = rec.touched.iter().map(|(_, p)| ip_of(p)).collect::<BTreeSet<_>>().len() > 1;
    Ok(Outcome::Accepted(
        ChangeInstance {
            instance_id: if multi_ip {
                format!("{}:{ip}", short(&rec.commit_id))
            } else {
                short(&rec.commit_id).to_string()
            },
            delta_spec: spec.clone(),
            affected_block_ids: all,
            commit_id: rec.commit_id.clone(),
            ip_name: ip.to_string(),
            snapshot_id: post.snapshot_id.clone(),
            family: None,
            pre_snapshot_id,
        },
        snaps,
    ))
}

fn mine_commit(
    repo: &GitRepo,
    cache: &FileCache,
    rec: &CommitRecord,
    extractor: &dyn Extractor,
    cfg: &MinerConfig,
) -> Result<Vec<Outcome>, MinerError> {
    let reject = |reason: Reason, detail: String| {
        Ok(vec![Outcome::Rejected(Rejection {
            commit_id: rec.commit_id.clone(),
            ip_name: None,
            reason,
            detail,
        })])
    };
    let spec = match extractor.extract(&rec.message) {
        Ok(s) => s,
        Err(ExtractError::MalformedOutput(e)) => return reject(Reason::MalformedOutput, e),
        Err(ExtractError::RemoteUnavailable(e)) => return reject(Reason::RemoteUnavailable, e),
    };
    let spec = match qc_spec(&spec, &rec.message, &cfg.qc) {
        Ok(s) => s,
        Err(r) => return reject(r, format!("label {:?}, confidence {:.2}", spec.label, spec.confidence)),
    };
    let mut by_ip: BTreeMap<String, Vec<&(ChangeKind, String)>> = BTreeMap::new();
    for t in &rec.touched {
        by_ip.entry(ip_of(&t.1)).or_default().push(t);
    }
    by_ip
        .iter()
        .map(|(ip, paths)| mine_ip(repo, cache, rec, ip, paths, &spec, cfg))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MineOutput {
    pub dataset: Dataset,
    pub rejections: Vec<Rejection>,
    pub commits_scanned: usize,
}

pub fn build_extractor(cfg: &MinerConfig) -> Result<Box<dyn Extractor>, MinerError> {
    Ok(match cfg.extractor {
        ExtractorKind::Fallback => Box::new(RuleExtractor),
        ExtractorKind::Remote => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| MinerError::RepoAccess("remote extractor needs an endpoint".into()))?;
            let remote = RemoteExtractor {
                endpoint,
                timeout: std::time::Duration::from_secs(cfg.timeout_secs),
            };
            if cfg.fallback_on_error {
                Box::new(WithFallback {
                    primary: remote,
                    fallback: RuleExtractor,
                })
            } else {
                Box::new(remote)
            }
        }
    })
}

/// Mines the first-parent history of the repository at `root`.
pub fn mine(root: &Path, cfg: &MinerConfig, extractor: &dyn Extractor) -> Result<MineOutput, MinerError> {
    let repo = GitRepo::open(root)?;
    let (records, mut rejections) = scan_history(&repo)?;
    let cache = FileCache::default();
    let outcomes = crate::par::map(&records, |r| mine_commit(&repo, &cache, r, extractor, cfg));
    let mut dataset = Dataset::default();
    for o in outcomes {
        for o in o? {
            match o {
                Outcome::Accepted(inst, snaps) => {
                    for s in snaps {
                        dataset.snapshots.insert(s.snapshot_id.clone(), s);
                    }
                    dataset.instances.push(inst);
                }
                Outcome::Rejected(r) => {
                    debug!("rejected {} ({})", short(&r.commit_id), r.reason.as_str());
                    rejections.push(r);
                }
            }
        }
    }
    let history = repo.first_parent_history()?;
    let order: HashMap<&str, usize> = history.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    rejections.sort_by_key(|r| (order.get(r.commit_id.as_str()).copied(), r.ip_name.clone()));
    let commits_scanned = history.len().saturating_sub(1);
    info!(
        "mined {} instance(s) ({} pairs) from {commits_scanned} commit(s); {} rejection(s)",
        dataset.instances.len(),
        dataset.pair_count(),
        rejections.len()
    );
    Ok(MineOutput {
        dataset,
        rejections,
        commits_scanned,
    })
}

/// Writes the dataset layout plus `rejections.jsonl`.
pub fn emit_dataset(out: &MineOutput, dir: &Path) -> Result<(), MinerError> {
    out.dataset.save(dir)?;
    write_jsonl(&dir.join("rejections.jsonl"), &out.rejections)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scrub_removes_trailers_and_addresses() {
        let m = "Fix fifo threshold\n\nReported by @alice, see bob@example.com.\nSigned-off-by: X <x@y.org>\nReviewed-by: Y <y@z.org>";
        assert_eq!(scrub_message(m), "Fix fifo threshold\n\nReported by , see .");
    }
}
