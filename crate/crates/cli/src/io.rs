// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use walkdir::WalkDir;

use rtloc_core::sv::{Snapshot, SourceFile};

const EXTENSIONS: [&str; 4] = ["sv", "svh", "v", "vh"];

fn is_source(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e))
}

fn read_source(path: &Path, name: String) -> Result<SourceFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SourceFile::from_bytes(name, bytes)?)
}

/// Files keep the path they were given; files found under a directory get
/// a path relative to it, so the first component names the IP.
pub fn load_sources(inputs: &[PathBuf]) -> Result<Vec<SourceFile>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let walker = WalkDir::new(input).sort_by_file_name().follow_links(true);
            for entry in walker {
                let entry = entry?;
                if entry.file_type().is_file() && is_source(entry.path()) {
                    let rel = entry.path().strip_prefix(input).expect("walk stays under root");
                    let name = rel.to_string_lossy().replace('\\', "/");
                    out.push(read_source(entry.path(), name)?);
                }
            }
        } else if input.is_file() {
            out.push(read_source(input, input.to_string_lossy().into_owned())?);
        } else {
            bail!("no such file or directory: {}", input.display());
        }
    }
    Ok(out)
}

pub fn load_snapshot(inputs: &[PathBuf], id: &str) -> Result<Snapshot> {
    Ok(Snapshot::build(id, load_sources(inputs)?)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

/// Pretty JSON plus a trailing newline.
pub fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn emit_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
