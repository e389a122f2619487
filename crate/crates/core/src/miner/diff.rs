// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use similar::{Algorithm, DiffTag, TextDiff};

use crate::retrieval::bm25::tokenize;
use crate::sv::RtlBlock;

/// Line ranges are 1-based starts with a line count; an empty side has
/// `lines == 0` and `start` is the line after which the other side applies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub path: String,
    pub old_start: usize,
    pub old_lines: usize,
    pub new_start: usize,
    pub new_lines: usize,
}

impl DiffHunk {
    pub fn old_range(&self) -> Option<(usize, usize)> {
        (self.old_lines > 0).then(|| (self.old_start, self.old_start + self.old_lines - 1))
    }

    pub fn new_range(&self) -> Option<(usize, usize)> {
        (self.new_lines > 0).then(|| (self.new_start, self.new_start + self.new_lines - 1))
    }
}

/// Minimal line edit script (Myers), adjacent edits grouped into hunks.
pub fn compute_hunks(path: &str, old: &str, new: &str) -> Vec<DiffHunk> {
    let diff = TextDiff::configure().algorithm(Algorithm::Myers).diff_lines(old, new);
    let mut runs: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut open = false;
    for op in diff.ops() {
        let (o, n) = (op.old_range(), op.new_range());
        if matches!(op.tag(), DiffTag::Equal) {
            open = false;
            continue;
        }
        match runs.last_mut() {
            Some(r) if open => {
                r.1 = o.end;
                r.3 = n.end;
            }
            _ => runs.push((o.start, o.end, n.start, n.end)),
        }
        open = true;
    }
    runs.into_iter()
        .map(|(o0, o1, n0, n1)| DiffHunk {
            path: path.to_string(),
            old_start: if o1 > o0 { o0 + 1 } else { o0 },
            old_lines: o1 - o0,
            new_start: if n1 > n0 { n0 + 1 } else { n0 },
            new_lines: n1 - n0,
        })
        .collect()
}

fn overlapping<'a>(blocks: &'a [RtlBlock], range: Option<(usize, usize)>) -> impl Iterator<Item = &'a RtlBlock> + 'a {
    blocks.iter().filter(move |b| match range {
        Some((s, e)) => b.span.start_line <= e && s <= b.span.end_line,
        None => false,
    })
}

/// Token-set overlap |A ∩ B| / |A ∪ B| of two block texts.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = tokenize(a).into_iter().collect();
    let tb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Post-revision id for a pre-revision block: same module, kind and
/// ordinal first, otherwise the most similar block of the same module and
/// kind with overlap ≥ `min_overlap`.
pub fn correspond<'a>(pre: &RtlBlock, post: &'a [RtlBlock], min_overlap: f64) -> Option<&'a RtlBlock> {
    let same = |b: &&RtlBlock| b.path == pre.path && b.module_name == pre.module_name && b.kind == pre.kind;
    if let Some(b) = post.iter().filter(same).find(|b| b.ordinal() == pre.ordinal()) {
        return Some(b);
    }
    post.iter()
        .filter(same)
        .map(|b| (token_overlap(&pre.text, &b.text), b))
        .filter(|(s, _)| *s >= min_overlap)
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.block_id.cmp(&a.1.block_id)))
        .map(|(_, b)| b)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappedBlocks {
    /// Ids in the post-revision snapshot.
    pub post: BTreeSet<String>,
    /// Pre-revision ids with no post-revision counterpart.
    pub pre_only: BTreeSet<String>,
}

/// Resolves hunks of one file against the blocks of both revisions. Returns
/// the first hunk that touches no block as the error.
pub fn map_hunks_to_blocks(
    hunks: &[DiffHunk],
    pre: &[RtlBlock],
    post: &[RtlBlock],
    min_overlap: f64,
) -> Result<MappedBlocks, DiffHunk> {
    let mut out = MappedBlocks {
        post: BTreeSet::new(),
        pre_only: BTreeSet::new(),
    };
    for h in hunks {
        let mut hit = false;
        for b in overlapping(post, h.new_range()) {
            hit = true;
            out.post.insert(b.block_id.clone());
        }
        for b in overlapping(pre, h.old_range()) {
            hit = true;
            match correspond(b, post, min_overlap) {
                Some(p) => out.post.insert(p.block_id.clone()),
                None => out.pre_only.insert(b.block_id.clone()),
            };
        }
        if !hit {
            return Err(h.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_files_have_no_hunks() {
        assert!(compute_hunks("a.sv", "a\nb\n", "a\nb\n").is_empty());
    }

    #[test]
    fn single_changed_line() {
        let h = compute_hunks("a.sv", "a\nb\nc\n", "a\nB\nc\n");
        assert_eq!(
            h,
            vec![DiffHunk {
                path: "a.sv".into(),
                old_start: 2,
                old_lines: 1,
                new_start: 2,
                new_lines: 1
            }]
        );
    }

    #[test]
    fn pure_insertion_and_deletion() {
        let h = compute_hunks("a.sv", "a\nc\n", "a\nb\nc\n");
        assert_eq!((h[0].old_range(), h[0].new_range()), (None, Some((2, 2))));
        let h = compute_hunks("a.sv", "a\nb\nc\n", "a\nc\n");
        assert_eq!((h[0].old_range(), h[0].new_range()), (Some((2, 2)), None));
        let h = compute_hunks("a.sv", "", "x\ny\n");
        assert_eq!(h[0].new_range(), Some((1, 2)));
    }
}
