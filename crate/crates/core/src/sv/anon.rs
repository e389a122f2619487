// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::lexer::{tokenize, TokKind};
use super::{Snapshot, SourceFile, SvError};

/// First-occurrence identifier mapping; shared across files to keep
/// cross-file names consistent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnonMap {
    map: BTreeMap<String, String>,
}

impl AnonMap {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.map.get(name).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn assign(&mut self, name: &str) -> &str {
        let next = self.map.len();
        self.map
            .entry(name.to_string())
            .or_insert_with(|| format!("VAR_{next}"))
    }
}

/// Replaces every user identifier with `VAR_i`, numbered by first
/// occurrence in this file. Keywords, system names, directives, literals,
/// comments and whitespace are left as they are.
pub fn anonymize(file: &SourceFile) -> Result<SourceFile, SvError> {
    anonymize_with(file, &mut AnonMap::default())
}

pub fn anonymize_with(file: &SourceFile, map: &mut AnonMap) -> Result<SourceFile, SvError> {
    let src = &file.content;
    let toks = tokenize(src)?;
    let mut out = String::with_capacity(src.len());
    let mut last = 0;
    for t in toks.iter().filter(|t| t.kind == TokKind::Ident) {
        out.push_str(&src[last..t.start]);
        out.push_str(map.assign(t.text(src)));
        last = t.end;
    }
    out.push_str(&src[last..]);
    Ok(SourceFile {
        path: file.path.clone(),
        content: out,
        ip_name: file.ip_name.clone(),
    })
}

/// Anonymizes every file of a snapshot with one mapping (files in path
/// order), then re-segments.
pub fn anonymize_snapshot(snapshot: &Snapshot) -> Result<(Snapshot, AnonMap), SvError> {
    let mut map = AnonMap::default();
    let mut files = snapshot.files.clone();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let files = files
        .iter()
        .map(|f| anonymize_with(f, &mut map))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Snapshot::build(snapshot.snapshot_id.clone(), files)?, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anon(src: &str) -> String {
        anonymize(&SourceFile::new("a.sv", src)).unwrap().content
    }

    #[test]
    fn first_occurrence_order() {
        assert_eq!(anon("assign foo = bar & baz;"), "assign VAR_0 = VAR_1 & VAR_2;");
        assert_eq!(
            anon("always_ff @(posedge clk) q <= $signed(q) + 8'hff; // q"),
            "always_ff @(posedge VAR_0) VAR_1 <= $signed(VAR_1) + 8'hff; // q"
        );
    }

    #[test]
    fn idempotent() {
        let once = anon("module m(input a, output b); assign b = ~a; endmodule");
        assert_eq!(anon(&once), once);
    }

    #[test]
    fn token_kinds_preserved() {
        let src = "module m; logic [W-1:0] x; assign x = {y, 2'b01} ? z : '0; endmodule";
        let out = anon(src);
        let k1: Vec<_> = tokenize(src).unwrap().iter().map(|t| t.kind).collect();
        let k2: Vec<_> = tokenize(&out).unwrap().iter().map(|t| t.kind).collect();
        assert_eq!(k1, k2);
    }
}
