// SPDX-License-Identifier: Apache-2.0

//! Ordered quality-control rules. The first failing rule decides the
//! rejection code.

use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::extract::EDIT_VERBS;
use crate::corpus::{ChangeInstance, DeltaSpec, Label};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NoDesignFiles,
    TestbenchOnly,
    MalformedOutput,
    RemoteUnavailable,
    Schema,
    Label,
    LowConfidence,
    Summary,
    Grounding,
    ParseError,
    UnmappedHunk,
    EmptyBlockSet,
    Oversized,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::NoDesignFiles => "no_design_files",
            Reason::TestbenchOnly => "testbench_only",
            Reason::MalformedOutput => "malformed_output",
            Reason::RemoteUnavailable => "remote_unavailable",
            Reason::Schema => "schema",
            Reason::Label => "label",
            Reason::LowConfidence => "low_confidence",
            Reason::Summary => "summary",
            Reason::Grounding => "grounding",
            Reason::ParseError => "parse_error",
            Reason::UnmappedHunk => "unmapped_hunk",
            Reason::EmptyBlockSet => "empty_block_set",
            Reason::Oversized => "oversized",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcConfig {
    /// Instances below this confidence are dropped.
    pub min_confidence: f64,
    /// Share of technical tokens in Context/Intention that must occur in
    /// the commit message.
    pub grounding_threshold: f64,
    pub max_blocks: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            min_confidence: 0.6,
            grounding_threshold: 0.5,
            max_blocks: 25,
        }
    }
}

fn path_or_line() -> Regex {
    Regex::new(
        r"(?ix)
        (?:[A-Za-z0-9_.\-]+/)+[A-Za-z0-9_.\-]+       # a/b/c
        | \b[A-Za-z0-9_\-]+\.(?:sv|svh|v|vh|vhd|py|c|h|cc|cpp|hjson|json|ya?ml|md|tcl|core|txt)\b
        | \blines?\s+\d+
        | :\d+\b
        | \bL\d+\b",
    )
    .expect("static regex")
}

/// Sentences of `text`, trimmed, empty ones dropped.
pub fn sentences(text: &str) -> Vec<String> {
    let re = Regex::new(r"[^.!?]+(?:[.!?]+|$)").expect("static regex");
    re.find_iter(text)
        .map(|m| m.as_str().trim().to_string())
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

/// Drops every sentence that mentions a file path or a line number.
pub fn scrub_paths(text: &str) -> String {
    let re = path_or_line();
    sentences(text)
        .into_iter()
        .filter(|s| !re.is_match(s))
        .collect::<Vec<_>>()
        .join(" ")
}

fn summary_ok(s: &str) -> Option<String> {
    let s = scrub_paths(s);
    let n = sentences(&s).len();
    (1..=2).contains(&n).then_some(s)
}

pub fn has_edit_verb(text: &str) -> bool {
    text.split(|c: char| !c.is_ascii_alphanumeric() && c != '-')
        .any(|w| EDIT_VERBS.contains(&w.to_ascii_lowercase().as_str()))
}

/// Identifier-like tokens: snake_case, digits, camelCase or ALLCAPS.
pub fn technical_tokens(text: &str) -> BTreeSet<String> {
    let re = Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("static regex");
    re.find_iter(text)
        .map(|m| m.as_str())
        .filter(|t| {
            t.contains('_')
                || t.chars().any(|c| c.is_ascii_digit())
                || t.chars()
                    .zip(t.chars().skip(1))
                    .any(|(a, b)| a.is_ascii_lowercase() && b.is_ascii_uppercase())
                || (t.len() >= 2 && t.chars().all(|c| c.is_ascii_uppercase()))
        })
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Share of `text`'s technical tokens that occur in `message`; 1 when there
/// are none.
pub fn grounding(text: &str, message: &str) -> f64 {
    let toks = technical_tokens(text);
    if toks.is_empty() {
        return 1.0;
    }
    let msg = message.to_ascii_lowercase();
    toks.iter().filter(|t| msg.contains(t.as_str())).count() as f64 / toks.len() as f64
}

/// Rules on the extracted specification, in order. On success returns the
/// cleaned specification (scrubbed summaries, Context cleared when it
/// narrates the edit).
pub fn qc_spec(spec: &DeltaSpec, message: &str, cfg: &QcConfig) -> Result<DeltaSpec, Reason> {
    if !(0.0..=1.0).contains(&spec.confidence) || !spec.confidence.is_finite() {
        return Err(Reason::Schema);
    }
    if spec.label != Label::Functional {
        return Err(Reason::Label);
    }
    if spec.confidence < cfg.min_confidence {
        return Err(Reason::LowConfidence);
    }
    let s_old = summary_ok(&spec.s_old).ok_or(Reason::Summary)?;
    let s_new = summary_ok(&spec.s_new).ok_or(Reason::Summary)?;
    let context = if has_edit_verb(&spec.context) {
        String::new()
    } else {
        spec.context.clone()
    };
    let claimed = format!("{} {}", context, spec.intention);
    if grounding(&claimed, message) < cfg.grounding_threshold {
        return Err(Reason::Grounding);
    }
    Ok(DeltaSpec {
        context,
        s_old,
        s_new,
        ..spec.clone()
    })
}

/// Rules on the affected block set (already a deduplicated set).
pub fn qc_blocks(blocks: &BTreeSet<String>, cfg: &QcConfig) -> Result<(), Reason> {
    if blocks.is_empty() {
        return Err(Reason::EmptyBlockSet);
    }
    if blocks.len() > cfg.max_blocks {
        return Err(Reason::Oversized);
    }
    Ok(())
}

/// All rules for a complete instance.
pub fn qc_filter(instance: &ChangeInstance, message: &str, cfg: &QcConfig) -> Result<DeltaSpec, Reason> {
    let spec = qc_spec(&instance.delta_spec, message, cfg)?;
    qc_blocks(&instance.affected_block_ids, cfg)?;
    Ok(spec)
}
