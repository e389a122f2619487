// SPDX-License-Identifier: Apache-2.0

//! SystemVerilog front end: tokenizing, block segmentation with exact spans,
//! per-block def/use sets, and identifier anonymization.

mod anon;
pub mod ast;
mod defuse;
pub mod lexer;
mod segment;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use anon::{anonymize, anonymize_snapshot, anonymize_with, AnonMap};
pub use defuse::{def_use_with_timing, event_roles, extract_def_use, signal_roles, DefUse};
pub use segment::{parse_file, Decl, DeclCategory, Direction, Instance, ModuleInfo, ParsedFile, PortConn};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SvError {
    #[error("unbalanced delimiters at line {line} (byte {byte}): {what}")]
    UnbalancedDelimiters { line: usize, byte: usize, what: String },
    #[error("{path}: not valid UTF-8 at byte {byte}")]
    EncodingError { path: String, byte: usize },
    #[error("block text does not parse: {0}")]
    BlockSyntax(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub ip_name: String,
}

impl SourceFile {
    /// The IP name is the first path component.
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        let path = path.into();
        let ip_name = ip_of(&path);
        SourceFile {
            path,
            content: content.into(),
            ip_name,
        }
    }

    pub fn from_bytes(path: impl Into<String>, bytes: Vec<u8>) -> Result<Self, SvError> {
        let path = path.into();
        match String::from_utf8(bytes) {
            Ok(content) => Ok(SourceFile::new(path, content)),
            Err(e) => Err(SvError::EncodingError {
                path,
                byte: e.utf8_error().valid_up_to(),
            }),
        }
    }
}

pub fn ip_of(path: &str) -> String {
    path.trim_start_matches("./")
        .split('/')
        .find(|c| !c.is_empty())
        .unwrap_or(path)
        .to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Assign,
    AlwaysFf,
    AlwaysComb,
    AlwaysGeneric,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Assign => "assign",
            BlockKind::AlwaysFf => "always_ff",
            BlockKind::AlwaysComb => "always_comb",
            BlockKind::AlwaysGeneric => "always_generic",
        }
    }
}

/// Lines are 1-based and inclusive; bytes are 0-based with an exclusive end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_line: usize,
    pub end_line: usize,
    pub start_byte: usize,
    pub end_byte: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlBlock {
    pub block_id: String,
    pub kind: BlockKind,
    pub span: Span,
    pub text: String,
    pub module_name: String,
    pub path: String,
    pub defined: BTreeSet<String>,
    pub used: BTreeSet<String>,
}

impl RtlBlock {
    pub fn ordinal(&self) -> usize {
        self.block_id
            .rsplit("::")
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    }
}

pub fn block_id(path: &str, module: &str, kind: BlockKind, ordinal: usize) -> String {
    format!("{path}::{module}::{}::{ordinal}", kind.as_str())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_id: String,
    pub files: Vec<SourceFile>,
    pub blocks: Vec<RtlBlock>,
    #[serde(default)]
    pub modules: Vec<ModuleInfo>,
}

impl Snapshot {
    /// Parses every file (in parallel when enabled) and collects blocks and
    /// module tables in path order.
    pub fn build(snapshot_id: impl Into<String>, mut files: Vec<SourceFile>) -> Result<Self, SvError> {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let parsed: Vec<Result<ParsedFile, SvError>> = crate::par::map(&files, parse_file);
        let mut blocks = Vec::new();
        let mut modules = Vec::new();
        for p in parsed {
            let p = p?;
            blocks.extend(p.blocks);
            modules.extend(p.modules);
        }
        Ok(Snapshot {
            snapshot_id: snapshot_id.into(),
            files,
            blocks,
            modules,
        })
    }

    pub fn block(&self, id: &str) -> Option<&RtlBlock> {
        self.blocks.iter().find(|b| b.block_id == id)
    }

    pub fn module(&self, name: &str) -> Option<&ModuleInfo> {
        self.modules.iter().find(|m| m.name == name)
    }
}

/// All assign statements and always procedures of one file, in source order.
pub fn segment_blocks(file: &SourceFile) -> Result<Vec<RtlBlock>, SvError> {
    Ok(parse_file(file)?.blocks)
}

/// Parses a block's own text (as stored in [`RtlBlock::text`]).
pub fn parse_block_ast(text: &str) -> Result<ast::BlockAst, SvError> {
    let toks = lexer::tokenize(text)?;
    let mut p = ast::Parser::new(text, &toks);
    let b = p
        .parse_block()
        .map_err(|e| SvError::BlockSyntax(format!("byte {}: {}", e.byte, e.msg)))?;
    Ok(b)
}

const AUTOGEN_MARKERS: &[&str] = &[
    "auto-generated",
    "autogenerated",
    "auto generated",
    "automatically generated",
    "do not edit",
    "generated by",
];

/// Testbench and generated-file predicate used when mining history: the path
/// has a `dv` or `tb` directory, the file name ends in `_tb.sv`, or a comment
/// in the first lines marks the file as generated.
pub fn is_testbench_or_generated(path: &str, content: &str) -> bool {
    let p = format!("/{}", path.trim_start_matches("./"));
    if p.contains("/dv/") || p.contains("/tb/") || p.ends_with("_tb.sv") || p.ends_with("_tb.svh") {
        return true;
    }
    content.lines().take(20).any(|line| {
        let l = line.trim_start();
        (l.starts_with("//") || l.starts_with("/*") || l.starts_with('*'))
            && AUTOGEN_MARKERS.iter().any(|m| l.to_ascii_lowercase().contains(m))
    })
}

pub fn is_design_path(path: &str) -> bool {
    path.ends_with(".sv") || path.ends_with(".svh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ip_name_is_first_component() {
        assert_eq!(SourceFile::new("uart/rtl/uart.sv", "").ip_name, "uart");
        assert_eq!(SourceFile::new("top.sv", "").ip_name, "top.sv");
    }

    #[test]
    fn encoding_error_reports_offset() {
        let err = SourceFile::from_bytes("a.sv", vec![b'a', 0xff]).unwrap_err();
        assert_eq!(
            err,
            SvError::EncodingError {
                path: "a.sv".into(),
                byte: 1
            }
        );
    }

    #[test]
    fn testbench_predicate() {
        assert!(is_testbench_or_generated("uart/dv/env.sv", ""));
        assert!(is_testbench_or_generated("uart/rtl/uart_tb.sv", ""));
        assert!(is_testbench_or_generated("tb/top.sv", ""));
        assert!(is_testbench_or_generated(
            "uart/rtl/regs.sv",
            "// Generated by regtool. DO NOT EDIT.\nmodule m; endmodule"
        ));
        assert!(!is_testbench_or_generated("uart/rtl/uart.sv", "module uart; endmodule"));
        assert!(!is_testbench_or_generated(
            "uart/rtl/uart.sv",
            "module m;\n  // generated by hand? no\nendmodule"
                .replace("generated by", "written by")
                .as_str()
        ));
    }
}
