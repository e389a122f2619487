// SPDX-License-Identifier: Apache-2.0

//! Turning a commit message into a [`DeltaSpec`]: a remote completion
//! endpoint driven by the fixed system prompt, or deterministic keyword
//! rules.

use std::collections::BTreeSet;
use std::time::Duration;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{DeltaSpec, Label};

pub const SYSTEM_PROMPT: &str = r#"You are an expert hardware specification analysis assistant.
Your input is a Git commit message describing RTL or hardware design changes.
Your task is to analyze it and return a structured JSON object.

Classification criteria:
- "Functional": The change affects externally observable or software-visible behavior
  (e.g., new modes, states, interrupts, alerts, thresholds, bit-widths, register fields,
  handshake protocols, clock/reset/idle/timing semantics, or architectural functionality).
- "Non-Functional": The change is purely refactoring, code movement, renaming, formatting,
  CI/scripts, comments, documentation, or testbench-only fixes.
- "Unclear": The message is too short or lacks sufficient behavioral detail
  to generate a reliable before/after summary.

Confidence score (0-1):
- Behavioral Clarity (0-0.8): How clearly the message describes what changed,
  what module or signal it affects, and under what condition.
- Consistency (0-0.2): Whether the message is internally consistent and unambiguous.
confidence = Clarity + Consistency.

Your tasks are:
1. Classify the message as "Functional", "Non-Functional", or "Unclear".
2. Provide a "confidence" score from 0 to 1.
3. Provide a concise "rationale" for the classification and score.
4. Generate concise "S_old" and "S_new" summaries (max 2 sentences each).
   - They should describe the module behavior before and after the change.
   - Do NOT include file paths or line numbers.
5. Extract "Context"
   - Summarize only the functional points or behavioral aspects of the affected module or its submodules that are explicitly mentioned in the commit message.
   - Do NOT infer or assume any functionality based on module names, signal names, or general domain knowledge. If the commit message does not explicitly describe any internal functionality or behavior, set this field to an empty string ("").
   - Do NOT describe what was changed, added, or fixed; those belong in "S_old" and "S_new".
6. Extract "Intention" - the design motivation or purpose of the change,
   such as fixing timing issues, adding safety logic, improving coverage, or enabling new functionality.

You MUST output only a single valid JSON object in the exact format below:

{
  "label": "",
  "confidence": 0.0,
  "rationale": "",
  "Context": "",
  "Intention": "",
  "S_old": "",
  "S_new": ""
}"#;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExtractError {
    #[error("extractor output is not a valid object: {0}")]
    MalformedOutput(String),
    #[error("remote extractor unavailable: {0}")]
    RemoteUnavailable(String),
}

/// Wire form of the extractor's answer.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    label: String,
    confidence: f64,
    rationale: String,
    #[serde(rename = "Context")]
    context: String,
    #[serde(rename = "Intention")]
    intention: String,
    #[serde(rename = "S_old")]
    s_old: String,
    #[serde(rename = "S_new")]
    s_new: String,
}

fn label_of(s: &str) -> Option<Label> {
    match s {
        "Functional" => Some(Label::Functional),
        "Non-Functional" => Some(Label::NonFunctional),
        "Unclear" => Some(Label::Unclear),
        _ => None,
    }
}

fn parse_strict(text: &str) -> Result<DeltaSpec, String> {
    let w: Wire = serde_json::from_str(text.trim()).map_err(|e| e.to_string())?;
    let label = label_of(&w.label).ok_or_else(|| format!("unknown label {:?}", w.label))?;
    Ok(DeltaSpec {
        label,
        confidence: w.confidence,
        rationale: w.rationale,
        context: w.context,
        intention: w.intention,
        s_old: w.s_old,
        s_new: w.s_new,
    })
}

/// Strips text around the outermost braces and normalizes typographic
/// quotes.
fn repair(text: &str) -> Option<String> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    Some(
        text[start..=end]
            .replace(['\u{201c}', '\u{201d}'], "\"")
            .replace(['\u{2018}', '\u{2019}'], "'"),
    )
}

/// Parses a completion into a [`DeltaSpec`], allowing one repair attempt.
/// Range checks are left to quality control.
pub fn parse_completion(text: &str) -> Result<DeltaSpec, ExtractError> {
    match parse_strict(text) {
        Ok(d) => Ok(d),
        Err(first) => match repair(text) {
            Some(r) => parse_strict(&r).map_err(ExtractError::MalformedOutput),
            None => Err(ExtractError::MalformedOutput(first)),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Remote,
    Fallback,
}

pub trait Extractor: Sync {
    fn extract(&self, message: &str) -> Result<DeltaSpec, ExtractError>;
}

/// JSON over HTTP: `{"prompt": ..., "message": ...}` in, completion text
/// out (either a bare body or `{"completion": ...}`).
pub struct RemoteExtractor {
    pub endpoint: String,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    message: &'a str,
}

#[derive(Deserialize)]
struct Completion {
    completion: String,
}

impl Extractor for RemoteExtractor {
    fn extract(&self, message: &str) -> Result<DeltaSpec, ExtractError> {
        let body = serde_json::to_string(&Request {
            prompt: SYSTEM_PROMPT,
            message,
        })
        .expect("serializable");
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| ExtractError::RemoteUnavailable(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ExtractError::RemoteUnavailable(e.to_string()))?;
        let completion = serde_json::from_str::<Completion>(&text)
            .map(|c| c.completion)
            .unwrap_or(text);
        parse_completion(&completion)
    }
}

/// Remote first, keyword rules when the endpoint cannot be reached.
pub struct WithFallback<E: Extractor> {
    pub primary: E,
    pub fallback: RuleExtractor,
}

impl<E: Extractor> Extractor for WithFallback<E> {
    fn extract(&self, message: &str) -> Result<DeltaSpec, ExtractError> {
        match self.primary.extract(message) {
            Err(ExtractError::RemoteUnavailable(e)) => {
                warn!("remote extractor unavailable ({e}); using keyword rules");
                self.fallback.extract(message)
            }
            other => other,
        }
    }
}

pub const EDIT_VERBS: &[&str] = &[
    "add",
    "adds",
    "added",
    "fix",
    "fixes",
    "fixed",
    "support",
    "enable",
    "enables",
    "implement",
    "implements",
    "change",
    "changes",
    "update",
    "updates",
    "correct",
    "corrects",
    "extend",
    "extends",
    "introduce",
    "introduces",
    "remove",
    "removes",
    "modify",
    "modifies",
    "allow",
    "allows",
    "prevent",
    "prevents",
    "handle",
    "handles",
    "increase",
    "increases",
    "decrease",
    "decreases",
    "make",
    "makes",
    "gate",
    "gates",
    "clear",
    "clears",
    "reset",
    "resets",
    "drop",
    "drops",
    "avoid",
    "avoids",
    "report",
    "reports",
    "derive",
    "derives",
];

pub const BEHAVIOR_NOUNS: &[&str] = &[
    "fifo",
    "depth",
    "threshold",
    "counter",
    "count",
    "interrupt",
    "irq",
    "alert",
    "state",
    "fsm",
    "mode",
    "register",
    "field",
    "reset",
    "clock",
    "timeout",
    "timer",
    "handshake",
    "overflow",
    "underflow",
    "parity",
    "ecc",
    "width",
    "bit",
    "bits",
    "valid",
    "ready",
    "off-by-one",
    "pointer",
    "request",
    "response",
    "idle",
    "error",
    "status",
    "trigger",
    "pulse",
    "edge",
    "priority",
    "arbiter",
    "address",
    "data",
    "enable",
    "latency",
    "stall",
    "flush",
    "lock",
    "polarity",
    "credit",
    "watermark",
    "level",
    "signal",
    "output",
    "input",
    "write",
    "read",
    "transaction",
    "protocol",
    "glitch",
    "deadlock",
    "race",
    "stuck",
    "sticky",
    "mask",
    "accumulator",
    "comparator",
    "mux",
    "shift",
    "crc",
    "checksum",
    "buffer",
    "queue",
    "sample",
    "capture",
];

pub const NON_FUNCTIONAL: &[&str] = &[
    "copyright",
    "header",
    "headers",
    "comment",
    "comments",
    "doc",
    "docs",
    "documentation",
    "typo",
    "typos",
    "format",
    "formatting",
    "reformat",
    "whitespace",
    "indent",
    "indentation",
    "lint",
    "style",
    "rename",
    "renames",
    "cleanup",
    "clean",
    "refactor",
    "refactoring",
    "ci",
    "script",
    "scripts",
    "readme",
    "license",
    "testbench",
    "tb",
    "dv",
    "test",
    "tests",
    "spelling",
    "cosmetic",
];

/// Keyword rules over the commit subject and body.
#[derive(Clone, Debug, Default)]
pub struct RuleExtractor;

fn words(text: &str) -> Vec<String> {
    let re = Regex::new(r"[A-Za-z][A-Za-z0-9_\-]*").expect("static regex");
    re.find_iter(text)
        .map(|m| m.as_str().trim_end_matches('-').to_ascii_lowercase())
        .collect()
}

impl Extractor for RuleExtractor {
    fn extract(&self, message: &str) -> Result<DeltaSpec, ExtractError> {
        let w = words(message);
        let hits =
            |lex: &[&str]| -> BTreeSet<String> { w.iter().filter(|t| lex.contains(&t.as_str())).cloned().collect() };
        let verbs = hits(EDIT_VERBS);
        let nouns = hits(BEHAVIOR_NOUNS);
        let nf = hits(NON_FUNCTIONAL);
        let label = if w.len() < 3 {
            Label::Unclear
        } else if !nf.is_empty() && nf.len() >= nouns.len() {
            Label::NonFunctional
        } else if !verbs.is_empty() && !nouns.is_empty() {
            Label::Functional
        } else {
            Label::Unclear
        };
        let clarity = (0.2 + 0.15 * nouns.len() as f64 + if verbs.is_empty() { 0.0 } else { 0.1 }).min(0.8);
        let consistency = if !nf.is_empty() && !nouns.is_empty() { 0.1 } else { 0.2 };
        let subject = message.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        let subject = subject.trim_end_matches(['.', '!', '?']).replace(['.', '!', '?'], ",");
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        Ok(DeltaSpec {
            label,
            confidence: clarity + consistency,
            rationale: format!(
                "keyword rules: edit verbs [{}], behavioral terms [{}], non-functional terms [{}]",
                join(&verbs),
                join(&nouns),
                join(&nf)
            ),
            context: String::new(),
            intention: subject.clone(),
            s_old: "The affected logic does not yet reflect the requested change.".to_string(),
            s_new: if subject.is_empty() {
                String::new()
            } else {
                format!("The affected logic is revised to: {subject}.")
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_strips_surrounding_text() {
        let raw = "Sure! {\"label\": \"Functional\", \"confidence\": 0.9, \"rationale\": \"r\", \"Context\": \"\", \"Intention\": \"i\", \"S_old\": \"a.\", \"S_new\": \"b.\"} hope this helps";
        assert_eq!(parse_completion(raw).unwrap().label, Label::Functional);
        assert!(matches!(
            parse_completion("not json"),
            Err(ExtractError::MalformedOutput(_))
        ));
        assert!(matches!(
            parse_completion("{\"label\": \"Maybe\", \"confidence\": 1}"),
            Err(ExtractError::MalformedOutput(_))
        ));
    }

    #[test]
    fn rule_labels() {
        let r = RuleExtractor;
        assert_eq!(
            r.extract("Fix off-by-one in fifo depth threshold").unwrap().label,
            Label::Functional
        );
        assert_eq!(
            r.extract("Update copyright headers").unwrap().label,
            Label::NonFunctional
        );
        assert_eq!(r.extract("wip").unwrap().label, Label::Unclear);
    }
}
