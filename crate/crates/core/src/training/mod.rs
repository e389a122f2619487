// SPDX-License-Identifier: Apache-2.0

//! Staged training: text encoder, local structural encoder, global graph
//! propagation, then the router. Each stage freezes everything trained
//! before it and writes its own checkpoint; `manifest.json` in the output
//! directory ties the stages, configuration and split together.

pub mod sampler;
mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rtloc_nn::{checkpoint, NnError, ParamStore};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Dataset};
use crate::encoders::{EncoderError, ModelConfig, Models, PreparedSnapshot};
use crate::retrieval::split::{ip_disjoint_split, IpSplit, SplitError};

pub use sampler::constrained_batches;
pub use stages::{train_glide, train_local, train_router, train_text, StageLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    /// Negatives per positive (stages 2 and 3) or per query (stage 4).
    pub negatives: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            lr: 5e-4,
            batch_size: 32,
            epochs: 30,
            warmup_frac: 0.1,
            negatives: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub text: StageConfig,
    pub local: StageConfig,
    pub glide: StageConfig,
    pub router: StageConfig,
    /// Hinge margin of the router loss.
    pub gamma: f64,
    pub weight_decay: f64,
    /// Train / validation / test shares of pairs, split by IP.
    pub split_ratios: [f64; 3],
    /// Keep the parameters of the best validation epoch (stages 2-4).
    pub select_on_validation: bool,
    /// Fit the router on validation queries, whose designs the experts never
    /// saw; validation selection is then skipped for the router.
    pub router_on_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 36,
            model: ModelConfig::default(),
            text: StageConfig {
                lr: 2e-5,
                epochs: 5,
                negatives: 0,
                ..StageConfig::default()
            },
            local: StageConfig::default(),
            glide: StageConfig {
                negatives: 31,
                ..StageConfig::default()
            },
            router: StageConfig {
                negatives: 8,
                ..StageConfig::default()
            },
            gamma: 0.5,
            weight_decay: 0.01,
            split_ratios: [0.7, 0.15, 0.15],
            select_on_validation: true,
            router_on_validation: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Text,
    Local,
    Glide,
    Router,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Text, Stage::Local, Stage::Glide, Stage::Router];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Text => "text",
            Stage::Local => "local",
            Stage::Glide => "glide",
            Stage::Router => "router",
        }
    }

    pub fn file_name(self) -> String {
        format!("stage{}.ckpt", self.number())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "text" => Ok(Stage::Text),
            "2" | "local" => Ok(Stage::Local),
            "3" | "glide" => Ok(Stage::Glide),
            "4" | "router" => Ok(Stage::Router),
            _ => Err(format!(
                "unknown stage {s:?} (expected 1-4, text, local, glide or router)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("stage {stage} needs the checkpoint of stage {missing} ({path})")]
    MissingCheckpoint {
        stage: Stage,
        missing: Stage,
        path: PathBuf,
    },
    #[error("parameters of frozen stage {0} changed while training a later stage")]
    FrozenModified(Stage),
    #[error("no training pairs for the {0} stage")]
    NoTrainingData(&'static str),
    #[error("model directory {0} has no manifest.json")]
    MissingManifest(PathBuf),
    #[error("configuration differs from the one in {0}")]
    ConfigMismatch(PathBuf),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Manifest(String),
}

/// One training or validation query with its positives as block positions
/// within the prepared snapshot.
#[derive(Clone, Debug)]
pub struct TrainQuery {
    pub id: String,
    pub text: String,
    pub snapshot: String,
    pub positives: Vec<usize>,
}

pub struct TrainData {
    pub train: Vec<TrainQuery>,
    pub val: Vec<TrainQuery>,
    pub snapshots: BTreeMap<String, PreparedSnapshot>,
}

impl TrainData {
    /// Training and validation queries of `split`; test IPs are not touched.
    pub fn prepare(ds: &Dataset, split: &IpSplit, cfg: &ModelConfig) -> Self {
        let wanted: BTreeSet<&str> = ds
            .instances
            .iter()
            .filter(|i| split.train.contains(&i.ip_name) || split.val.contains(&i.ip_name))
            .map(|i| i.snapshot_id.as_str())
            .collect();
        let ids: Vec<&str> = wanted.into_iter().collect();
        let prepared = crate::par::map(&ids, |id| PreparedSnapshot::new(&ds.snapshots[*id], cfg));
        let snapshots: BTreeMap<String, PreparedSnapshot> = ids.iter().map(|s| s.to_string()).zip(prepared).collect();
        let mut train = Vec::new();
        let mut val = Vec::new();
        for i in &ds.instances {
            let target = if split.train.contains(&i.ip_name) {
                &mut train
            } else if split.val.contains(&i.ip_name) {
                &mut val
            } else {
                continue;
            };
            let p = &snapshots[&i.snapshot_id];
            let positives: Vec<usize> = i
                .affected_block_ids
                .iter()
                .filter_map(|b| p.position.get(b).copied())
                .collect();
            if positives.is_empty() {
                continue;
            }
            target.push(TrainQuery {
                id: i.instance_id.clone(),
                text: i.query_text(),
                snapshot: i.snapshot_id.clone(),
                positives,
            });
        }
        TrainData { train, val, snapshots }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub file: String,
    pub digest: String,
    pub log: StageLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub seed: u64,
    pub config: TrainConfig,
    pub split: IpSplit,
    pub stages: Vec<StageRecord>,
}

impl ModelManifest {
    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let p = dir.join("manifest.json");
        if !p.exists() {
            return Err(TrainError::MissingManifest(dir.to_path_buf()));
        }
        let bytes = fs::read(&p).map_err(|source| TrainError::Io {
            path: p.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| TrainError::Manifest(format!("{}: {e}", p.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let p = dir.join("manifest.json");
        let s = serde_json::to_string_pretty(self).expect("serializable");
        fs::write(&p, s).map_err(|source| TrainError::Io { path: p, source })
    }
}

/// Pair counts per IP, the unit the split balances.
pub fn ip_pair_counts(ds: &Dataset) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in &ds.instances {
        *m.entry(i.ip_name.clone()).or_insert(0) += i.affected_block_ids.len();
    }
    m
}

pub fn split_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<IpSplit, TrainError> {
    Ok(ip_disjoint_split(&ip_pair_counts(ds), cfg.split_ratios, cfg.seed)?)
}

fn store_of(models: &Models, stage: Stage) -> &ParamStore {
    match stage {
        Stage::Text => &models.text.store,
        Stage::Local => &models.local.store,
        Stage::Glide => &models.glide.store,
        Stage::Router => &models.router.store,
    }
}

fn store_of_mut(models: &mut Models, stage: Stage) -> &mut ParamStore {
    match stage {
        Stage::Text => &mut models.text.store,
        Stage::Local => &mut models.local.store,
        Stage::Glide => &mut models.glide.store,
        Stage::Router => &mut models.router.store,
    }
}

/// Runs `stages` (in pipeline order) into `dir`. Earlier stages must be
/// present in `dir` already or be part of the same call. A fresh directory
/// takes its split from `split` or derives one from the seed; a directory
/// with a manifest keeps its own split and requires the same configuration.
pub fn train(
    dir: &Path,
    ds: &Dataset,
    stages: &[Stage],
    cfg: &TrainConfig,
    split: Option<IpSplit>,
) -> Result<ModelManifest, TrainError> {
    fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = match ModelManifest::load(dir) {
        Ok(m) => {
            if m.config != *cfg {
                return Err(TrainError::ConfigMismatch(dir.join("manifest.json")));
            }
            m
        }
        Err(TrainError::MissingManifest(_)) => ModelManifest {
            seed: cfg.seed,
            config: cfg.clone(),
            split: match split {
                Some(s) => s,
                None => split_dataset(ds, cfg)?,
            },
            stages: Vec::new(),
        },
        Err(e) => return Err(e),
    };
    let mut todo: Vec<Stage> = stages.to_vec();
    todo.sort();
    todo.dedup();
    let mut models = Models::new(cfg.model.clone(), cfg.seed);
    let data = TrainData::prepare(ds, &manifest.split, &cfg.model);
    info!(
        "training {:?}: {} train / {} val queries over {} snapshots",
        todo.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        data.train.len(),
        data.val.len(),
        data.snapshots.len()
    );
    let mut done: BTreeSet<Stage> = BTreeSet::new();
    for &stage in &todo {
        for prior in Stage::ALL.iter().copied().filter(|s| *s < stage) {
            if done.contains(&prior) {
                continue;
            }
            let path = dir.join(prior.file_name());
            if !path.exists() || manifest.record(prior).is_none() {
                return Err(TrainError::MissingCheckpoint {
                    stage,
                    missing: prior,
                    path,
                });
            }
            checkpoint::load_into(&path, store_of_mut(&mut models, prior))?;
            done.insert(prior);
        }
        let before: Vec<(Stage, String)> = done.iter().map(|&s| (s, store_of(&models, s).digest())).collect();
        let log = run_stage(stage, &data, &mut models, cfg)?;
        for (s, d) in before {
            if store_of(&models, s).digest() != d {
                return Err(TrainError::FrozenModified(s));
            }
        }
        let store = store_of(&models, stage);
        let hyper = serde_json::to_value(cfg).expect("serializable");
        checkpoint::save(&dir.join(stage.file_name()), store, stage.as_str(), cfg.seed, hyper)?;
        let record = StageRecord {
            stage,
            file: stage.file_name(),
            digest: store.digest(),
            log,
        };
        info!("stage {} done, digest {}", stage.number(), &record.digest[..12]);
        manifest.stages.retain(|r| r.stage != stage);
        // later stages were trained against the old parameters
        manifest.stages.retain(|r| r.stage < stage);
        manifest.stages.push(record);
        manifest.save(dir)?;
        done.insert(stage);
    }
    Ok(manifest)
}

fn run_stage(stage: Stage, data: &TrainData, models: &mut Models, cfg: &TrainConfig) -> Result<StageLog, TrainError> {
    let log = match stage {
        Stage::Text => {
            let (m, log) = train_text(data, cfg)?;
            models.text = m;
            log
        }
        Stage::Local => {
            let (m, log) = train_local(data, &models.text, cfg)?;
            models.local = m;
            log
        }
        Stage::Glide => {
            let (m, log) = train_glide(data, &models.text, &models.local, cfg)?;
            models.glide = m;
            log
        }
        Stage::Router => {
            let (m, log) = train_router(data, &models.text, &models.local, &models.glide, cfg)?;
            models.router = m;
            log
        }
    };
    Ok(log)
}

/// Loads every stage recorded in `dir/manifest.json`, checking digests.
/// Stages without a checkpoint are an error.
pub fn load_models(dir: &Path) -> Result<(Models, ModelManifest), TrainError> {
    let manifest = ModelManifest::load(dir)?;
    let mut models = Models::new(manifest.config.model.clone(), manifest.seed);
    for stage in Stage::ALL {
        let Some(rec) = manifest.record(stage) else {
            return Err(TrainError::MissingCheckpoint {
                stage: Stage::Router,
                missing: stage,
                path: dir.join(stage.file_name()),
            });
        };
        let path = dir.join(&rec.file);
        if !path.exists() {
            return Err(TrainError::MissingCheckpoint {
                stage: Stage::Router,
                missing: stage,
                path,
            });
        }
        let store = store_of_mut(&mut models, stage);
        checkpoint::load_into(&path, store)?;
        if store.digest() != rec.digest {
            return Err(TrainError::Manifest(format!(
                "{} does not match its recorded digest",
                path.display()
            )));
        }
    }
    Ok((models, manifest))
}
