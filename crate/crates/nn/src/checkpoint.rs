// SPDX-License-Identifier: Apache-2.0

//! Checkpoint files: one line of JSON manifest, then the raw little-endian
//! `f64` payload of every parameter in manifest order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NnError, ParamStore, Tensor};

pub const FORMAT: &str = "rtloc-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stage: String,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn payload_len(&self) -> usize {
        self.params.iter().map(|p| p.shape[0] * p.shape[1] * 8).sum()
    }
}

pub fn to_bytes(
    store: &ParamStore,
    stage: &str,
    seed: u64,
    hyperparameters: serde_json::Value,
) -> Result<Vec<u8>, NnError> {
    let manifest = Manifest {
        format: FORMAT.to_string(),
        stage: stage.to_string(),
        seed,
        hyperparameters,
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape(),
                frozen: p.frozen,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.push(b'\n');
    out.reserve(manifest.payload_len());
    for (_, p) in store.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    stage: &str,
    seed: u64,
    hyperparameters: serde_json::Value,
) -> Result<(), NnError> {
    let bytes = to_bytes(store, stage, seed, hyperparameters)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn from_reader(reader: impl Read) -> Result<(Manifest, ParamStore), NnError> {
    let mut reader = BufReader::new(reader);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let manifest: Manifest =
        serde_json::from_slice(&line).map_err(|e| NnError::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(NnError::Checkpoint(format!("unknown format {}", manifest.format)));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != manifest.payload_len() {
        return Err(NnError::Checkpoint(format!(
            "payload holds {} bytes, manifest describes {}",
            payload.len(),
            manifest.payload_len()
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0;
    for entry in &manifest.params {
        let n = entry.shape[0] * entry.shape[1];
        let data = payload[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        off += n * 8;
        let id = store.add_tensor(&entry.name, Tensor::from_vec(entry.shape[0], entry.shape[1], data)?);
        store.get_mut(id).frozen = entry.frozen;
    }
    Ok((manifest, store))
}

pub fn load(path: &Path) -> Result<(Manifest, ParamStore), NnError> {
    from_reader(fs::File::open(path)?)
}

/// Loads `path` into an already-built model store, verifying that every
/// name and shape matches.
pub fn load_into(path: &Path, store: &mut ParamStore) -> Result<Manifest, NnError> {
    let (manifest, loaded) = load(path)?;
    store.load_values_from(&loaded)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Init;

    #[test]
    fn round_trip_and_shape_verification() {
        let mut store = ParamStore::new();
        store.add("a", 2, 3, Init::XavierUniform, 36);
        store.add("b", 1, 4, Init::Uniform(1.0), 36);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save(&path, &store, "stage1", 36, serde_json::json!({"lr": 2e-5})).unwrap();
        let (manifest, loaded) = load(&path).unwrap();
        assert_eq!(manifest.stage, "stage1");
        assert_eq!(loaded, store);

        let mut wrong = ParamStore::new();
        wrong.add("a", 3, 2, Init::Zeros, 0);
        wrong.add("b", 1, 4, Init::Zeros, 0);
        assert!(load_into(&path, &mut wrong).is_err());

        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
    }
}
