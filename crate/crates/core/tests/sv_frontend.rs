// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use rtloc_core::sv::{anonymize, extract_def_use, parse_block_ast, segment_blocks, BlockKind, SourceFile};

fn annotated() -> BTreeMap<String, [usize; 4]> {
    let text = std::fs::read_to_string(common::fixture_dir().join("counts.tsv")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let n = |i: usize| f[i].parse::<usize>().unwrap();
            (f[0].to_string(), [n(1), n(2), n(3), n(4)])
        })
        .collect()
}

fn kind_index(k: BlockKind) -> usize {
    match k {
        BlockKind::Assign => 0,
        BlockKind::AlwaysFf => 1,
        BlockKind::AlwaysComb => 2,
        BlockKind::AlwaysGeneric => 3,
    }
}

#[test]
fn corpus_block_counts_match_annotation() {
    let truth = annotated();
    let files = common::corpus();
    assert_eq!(files.len(), 20);
    assert_eq!(truth.len(), 20);
    for f in &files {
        let blocks = segment_blocks(f).unwrap();
        let mut got = [0usize; 4];
        for b in &blocks {
            got[kind_index(b.kind)] += 1;
        }
        assert_eq!(
            &got,
            truth.get(&f.path).unwrap_or_else(|| panic!("{} not annotated", f.path)),
            "{}",
            f.path
        );
    }
}

#[test]
fn spans_reconstruct_sources() {
    for f in common::corpus() {
        let src = f.content.as_str();
        let blocks = segment_blocks(&f).unwrap();
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for b in &blocks {
            let s = b.span;
            assert!(s.start_byte >= cursor, "{}: overlapping spans", f.path);
            assert_eq!(&src[s.start_byte..s.end_byte], b.text, "{}", b.block_id);
            assert_eq!(
                s.start_line,
                1 + src[..s.start_byte].matches('\n').count(),
                "{}",
                b.block_id
            );
            assert_eq!(
                s.end_line,
                s.start_line + b.text.matches('\n').count(),
                "{}",
                b.block_id
            );
            rebuilt.push_str(&src[cursor..s.start_byte]);
            rebuilt.push_str(&b.text);
            cursor = s.end_byte;
        }
        rebuilt.push_str(&src[cursor..]);
        assert_eq!(rebuilt, src);
    }
}

#[test]
fn every_block_reparses_from_its_own_text() {
    for f in common::corpus() {
        for b in segment_blocks(&f).unwrap() {
            let ast = parse_block_ast(&b.text).unwrap_or_else(|e| panic!("{}: {e}", b.block_id));
            assert_eq!(ast.kind, b.kind);
            let du = extract_def_use(&b).unwrap();
            assert_eq!((du.defined, du.used), (b.defined.clone(), b.used.clone()));
        }
    }
}

#[test]
fn block_ids_are_unique_and_ordinal_per_kind() {
    for f in common::corpus() {
        let blocks = segment_blocks(&f).unwrap();
        let mut seen: BTreeMap<(String, BlockKind), usize> = BTreeMap::new();
        for b in &blocks {
            let n = seen.entry((b.module_name.clone(), b.kind)).or_default();
            assert_eq!(b.ordinal(), *n, "{}", b.block_id);
            *n += 1;
        }
    }
}

#[test]
fn comments_and_strings_do_not_form_blocks() {
    let f = common::corpus()
        .into_iter()
        .find(|f| f.path.ends_with("prim_latch_cg.sv"))
        .unwrap();
    let blocks = segment_blocks(&f).unwrap();
    assert_eq!(
        blocks.iter().map(|b| b.kind).collect::<Vec<_>>(),
        vec![BlockKind::AlwaysGeneric, BlockKind::Assign]
    );
}

#[test]
fn def_use_examples() {
    let f = SourceFile::new(
        "ip/rtl/m.sv",
        "module m;\n  assign y = a & b;\n  always_ff @(posedge clk) if (en) q <= q + 1;\n  always_comb $display(\"%d\", x, z);\nendmodule\n",
    );
    let b = segment_blocks(&f).unwrap();
    let set = |v: &[&str]| {
        v.iter()
            .map(|s| s.to_string())
            .collect::<std::collections::BTreeSet<_>>()
    };
    assert_eq!(
        (b[0].defined.clone(), b[0].used.clone()),
        (set(&["y"]), set(&["a", "b"]))
    );
    assert_eq!(
        (b[1].defined.clone(), b[1].used.clone()),
        (set(&["q"]), set(&["clk", "en", "q"]))
    );
    assert_eq!((b[2].defined.clone(), b[2].used.clone()), (set(&[]), set(&["x", "z"])));
}

#[test]
fn anonymization_is_idempotent_over_the_corpus() {
    for f in common::corpus() {
        let once = anonymize(&f).unwrap();
        let twice = anonymize(&once).unwrap();
        assert_eq!(once, twice, "{}", f.path);
        let a = segment_blocks(&f).unwrap();
        let b = segment_blocks(&once).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                (x.kind, x.defined.len(), x.used.len()),
                (y.kind, y.defined.len(), y.used.len())
            );
        }
    }
}

#[test]
fn anonymized_assign_example() {
    let f = SourceFile::new(
        "ip/rtl/m.sv",
        "module m;\nassign foo = bar & baz;\nalways_ff @(posedge clk) foo <= bar;\nendmodule\n",
    );
    let a = anonymize(&f).unwrap();
    assert!(a.content.contains("assign VAR_1 = VAR_2 & VAR_3;"), "{}", a.content);
    assert!(
        a.content.contains("always_ff @(posedge VAR_4) VAR_1 <= VAR_2;"),
        "{}",
        a.content
    );
}
