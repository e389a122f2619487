// SPDX-License-Identifier: Apache-2.0

//! Synthetic corpus with planted cues. Each design is one module built from
//! filler logic plus a handful of recognizable motifs; every motif output is
//! read by exactly one filler block (its consumer). Queries come in three
//! families:
//!
//! - `lexical`: cite the identifiers of the target block(s)
//! - `structural`: describe the motif's logic without naming anything
//! - `topology`: ask for the block that consumes a described motif's output

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChangeInstance, Dataset, DeltaSpec, Label};
use crate::sv::{Snapshot, SourceFile, SvError};

pub const FAMILIES: [&str; 3] = ["lexical", "structural", "topology"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub designs: usize,
    pub blocks_per_design: usize,
    pub motifs_per_design: usize,
    pub instances_per_family: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            designs: 40,
            blocks_per_design: 30,
            motifs_per_design: 8,
            instances_per_family: 4,
            seed: 36,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MotifKind {
    Counter,
    Parity,
    Mux,
    Comparator,
    ShiftReg,
    EdgeDetect,
    DownCounter,
    Concat,
    Fsm,
    Accumulator,
    Mask,
    Gray,
}

const MOTIFS: [MotifKind; 12] = [
    MotifKind::Counter,
    MotifKind::Parity,
    MotifKind::Mux,
    MotifKind::Comparator,
    MotifKind::ShiftReg,
    MotifKind::EdgeDetect,
    MotifKind::DownCounter,
    MotifKind::Concat,
    MotifKind::Fsm,
    MotifKind::Accumulator,
    MotifKind::Mask,
    MotifKind::Gray,
];

impl MotifKind {
    fn descriptions(self) -> &'static [&'static str] {
        match self {
            MotifKind::Counter => &[
                "counter that increments when enabled",
                "enabled up-counter register",
                "register counting up by one each enabled cycle",
            ],
            MotifKind::Parity => &[
                "parity reduction",
                "xor reduction computing parity",
                "single-bit parity of a bus",
            ],
            MotifKind::Mux => &[
                "two-way multiplexer",
                "select between two buses with a condition bit",
                "ternary mux choosing one of two inputs",
            ],
            MotifKind::Comparator => &[
                "greater-than comparator",
                "magnitude comparison of two buses",
                "check whether one value exceeds another",
            ],
            MotifKind::ShiftReg => &[
                "shift register",
                "serial shifter that moves in one bit per clock",
                "register shifting left and inserting a bit",
            ],
            MotifKind::EdgeDetect => &[
                "rising edge detector",
                "pulse on a new rising edge",
                "detector comparing a signal with its delayed copy",
            ],
            MotifKind::DownCounter => &[
                "down-counter that stops at zero",
                "decrementing timer register",
                "countdown register saturating at zero",
            ],
            MotifKind::Concat => &[
                "bus concatenation",
                "field packing by concatenating slices",
                "packing of several slices into one word",
            ],
            MotifKind::Fsm => &[
                "case statement selecting by state",
                "combinational state decode with a case",
                "case-based output decoder",
            ],
            MotifKind::Accumulator => &[
                "accumulator register",
                "running sum that adds the input every cycle",
                "adder feeding back into its own register",
            ],
            MotifKind::Mask => &[
                "mask keeping the upper nibble",
                "bitwise and with a constant mask",
                "constant mask clearing the low bits",
            ],
            MotifKind::Gray => &[
                "binary to gray code conversion",
                "gray encoder xoring a value with its shift",
                "gray code encoder",
            ],
        }
    }

    /// Number of data inputs read besides the clock and reset.
    fn arity(self) -> usize {
        match self {
            MotifKind::Counter | MotifKind::Parity | MotifKind::ShiftReg | MotifKind::EdgeDetect => 1,
            MotifKind::DownCounter | MotifKind::Accumulator | MotifKind::Mask | MotifKind::Gray => 1,
            MotifKind::Comparator => 2,
            MotifKind::Mux | MotifKind::Concat | MotifKind::Fsm => 3,
        }
    }

    fn render(self, o: &str, i: &[String]) -> String {
        let ff = "always_ff @(posedge clk_i or negedge rst_ni) begin";
        match self {
            MotifKind::Counter => format!(
                "{ff}\n    if (!rst_ni) {o} <= '0;\n    else if ({a}[0]) {o} <= {o} + 1'b1;\n  end",
                a = i[0]
            ),
            MotifKind::Parity => format!("assign {o} = ^{};", i[0]),
            MotifKind::Mux => format!("assign {o} = {}[0] ? {} : {};", i[2], i[0], i[1]),
            MotifKind::Comparator => format!("assign {o} = {} > {};", i[0], i[1]),
            MotifKind::ShiftReg => format!("always_ff @(posedge clk_i) begin\n    {o} <= {{{o}[6:0], {}[0]}};\n  end", i[0]),
            MotifKind::EdgeDetect => format!("assign {o} = {} & ~{};", i[0], i[1]),
            MotifKind::DownCounter => format!(
                "{ff}\n    if (!rst_ni) {o} <= 8'hFF;\n    else if ({o} != 0) {o} <= {o} - 1'b1;\n  end"
            ),
            MotifKind::Concat => format!("assign {o} = {{{}[3:0], {}[1:0], {}[1:0]}};", i[0], i[1], i[2]),
            MotifKind::Fsm => format!(
                "always_comb begin\n    case ({s}[1:0])\n      2'd0: {o} = {a};\n      2'd1: {o} = {b};\n      default: {o} = '0;\n    endcase\n  end",
                s = i[2],
                a = i[0],
                b = i[1]
            ),
            MotifKind::Accumulator => format!("{ff}\n    if (!rst_ni) {o} <= '0;\n    else {o} <= {o} + {};\n  end", i[0]),
            MotifKind::Mask => format!("assign {o} = {} & 8'hF0;", i[0]),
            MotifKind::Gray => format!("assign {o} = {a} ^ ({a} >> 1);", a = i[0]),
        }
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "zu", "ter", "vap", "bri", "sol", "nex", "qua", "dor", "fim", "gal", "hup", "jix", "ply", "rov",
    "sek", "tun", "wob", "yel", "zor", "pim", "cru", "dax", "eno", "fol", "gri", "hov", "ilk", "jum", "kel", "mav",
    "nob", "osp", "pel", "rix", "sna", "tob", "urd", "vel", "wix", "yad", "zep",
];

struct Names {
    used: BTreeSet<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let s: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("syllables")).collect();
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }
}

struct PlantedMotif {
    kind: MotifKind,
    out: String,
    inputs: Vec<String>,
    consumer: String,
}

struct Design {
    ip: String,
    path: String,
    source: String,
    motifs: Vec<PlantedMotif>,
}

fn filler(rng: &mut ChaCha8Rng, o: &str, a: &str, b: &str) -> String {
    match rng.random_range(0..5) {
        0 => format!("assign {o} = {a} | {b};"),
        1 => format!("assign {o} = {a} & {b};"),
        2 => format!("assign {o} = {a} ^ {b};"),
        3 => format!("assign {o} = ~{a};"),
        _ => format!("always_ff @(posedge clk_i) begin\n    {o} <= {a};\n  end"),
    }
}

fn design(cfg: &SynthConfig, rng: &mut ChaCha8Rng, ip_names: &mut Names) -> Design {
    let ip = format!("ip_{}", ip_names.fresh(rng));
    let mut names = Names { used: BTreeSet::new() };
    let inputs: Vec<String> = (0..4).map(|_| format!("{}_i", names.fresh(rng))).collect();
    let output = format!("{}_o", names.fresh(rng));
    let mut kinds = MOTIFS.to_vec();
    kinds.shuffle(rng);
    kinds.truncate(cfg.motifs_per_design.min(MOTIFS.len()));

    let mut pool: Vec<String> = inputs.clone();
    let mut blocks: Vec<String> = Vec::new();
    let mut internal: Vec<String> = Vec::new();
    // motifs + consumers + the output assign
    let n_fill = cfg.blocks_per_design.saturating_sub(2 * kinds.len() + 1).max(2);
    for _ in 0..n_fill {
        let o = names.fresh(rng);
        let a = pool.choose(rng).expect("pool").clone();
        let b = pool.choose(rng).expect("pool").clone();
        blocks.push(filler(rng, &o, &a, &b));
        internal.push(o.clone());
        pool.push(o);
    }
    let mut motifs = Vec::new();
    for kind in kinds {
        let o = names.fresh(rng);
        let mut ins: Vec<String> = Vec::new();
        while ins.len() < kind.arity() {
            let s = pool.choose(rng).expect("pool").clone();
            if !ins.contains(&s) {
                ins.push(s);
            }
        }
        if kind == MotifKind::EdgeDetect {
            let d = names.fresh(rng);
            blocks.push(format!(
                "always_ff @(posedge clk_i) begin\n    {d} <= {};\n  end",
                ins[0]
            ));
            internal.push(d.clone());
            ins.push(d);
        }
        blocks.push(kind.render(&o, &ins));
        internal.push(o.clone());
        let c = names.fresh(rng);
        let f = pool.choose(rng).expect("pool").clone();
        blocks.push(filler(rng, &c, &o, &f).replace(&format!("~{o}"), &format!("~({o} | {f})")));
        internal.push(c.clone());
        motifs.push(PlantedMotif {
            kind,
            out: o,
            inputs: ins,
            consumer: c,
        });
    }
    let a = pool[4.min(pool.len() - 1)..].choose(rng).expect("pool").clone();
    let b = pool.choose(rng).expect("pool").clone();
    blocks.push(format!("assign {output} = {a} ^ {b};"));
    blocks.shuffle(rng);

    let mut src = format!("module {ip} (\n  input  logic       clk_i,\n  input  logic       rst_ni,\n");
    for i in &inputs {
        src.push_str(&format!("  input  logic [7:0] {i},\n"));
    }
    src.push_str(&format!("  output logic [7:0] {output}\n);\n\n"));
    for s in &internal {
        src.push_str(&format!("  logic [7:0] {s};\n"));
    }
    src.push('\n');
    for b in &blocks {
        src.push_str(&format!("  {b}\n\n"));
    }
    src.push_str("endmodule\n");
    Design {
        path: format!("{ip}/rtl/{ip}.sv"),
        ip,
        source: src,
        motifs,
    }
}

const CONTEXT: &str = "The change targets one block of a small datapath design.";

fn spec(intention: String, family: &str) -> DeltaSpec {
    let (s_old, s_new) = match family {
        "lexical" => (
            "The named signals use their current expression.",
            "The named signals use a revised expression.",
        ),
        "structural" => (
            "The described logic behaves as before.",
            "The described logic gets new behaviour.",
        ),
        _ => (
            "The downstream logic uses the current result.",
            "The downstream logic reacts to the new result.",
        ),
    };
    DeltaSpec {
        label: Label::Functional,
        confidence: 0.9,
        rationale: "planted".to_string(),
        context: CONTEXT.to_string(),
        intention,
        s_old: s_old.to_string(),
        s_new: s_new.to_string(),
    }
}

fn defining_block(snap: &Snapshot, signal: &str) -> Option<String> {
    snap.blocks
        .iter()
        .find(|b| b.defined.contains(signal))
        .map(|b| b.block_id.clone())
}

/// Generates the corpus; one snapshot per design.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ip_names = Names { used: BTreeSet::new() };
    let mut snapshots = BTreeMap::new();
    let mut instances = Vec::new();
    for _ in 0..cfg.designs {
        let d = design(cfg, &mut rng, &mut ip_names);
        let snapshot_id = format!("{}@synth", d.ip);
        let snap = Snapshot::build(&snapshot_id, vec![SourceFile::new(&d.path, &d.source)])?;
        let mut k = 0;
        for family in FAMILIES {
            let mut idx: Vec<usize> = (0..d.motifs.len()).collect();
            idx.shuffle(&mut rng);
            for &m in idx.iter().take(cfg.instances_per_family) {
                let pm = &d.motifs[m];
                let desc = *pm.kind.descriptions().choose(&mut rng).expect("descriptions");
                let motif_block = defining_block(&snap, &pm.out).expect("motif block");
                let consumer_block = defining_block(&snap, &pm.consumer).expect("consumer block");
                let (intention, blocks) = match family {
                    "lexical" => {
                        if rng.random_bool(0.5) {
                            (
                                format!("Update how {} is computed from {}.", pm.out, pm.inputs.join(" and ")),
                                vec![motif_block],
                            )
                        } else {
                            (
                                format!("Update {} and the logic driving {} that reads it.", pm.out, pm.consumer),
                                vec![motif_block, consumer_block],
                            )
                        }
                    }
                    "structural" => (format!("Modify the {desc}."), vec![motif_block]),
                    _ => (
                        format!("Modify the logic that consumes the output of the {desc}."),
                        vec![consumer_block],
                    ),
                };
                instances.push(ChangeInstance {
                    instance_id: format!("{}-{k:02}", d.ip),
                    delta_spec: spec(intention, family),
                    affected_block_ids: blocks.into_iter().collect(),
                    commit_id: format!("synth-{}-{k:02}", d.ip),
                    ip_name: d.ip.clone(),
                    snapshot_id: snapshot_id.clone(),
                    family: Some(family.to_string()),
                    pre_snapshot_id: None,
                });
                k += 1;
            }
        }
        snapshots.insert(snapshot_id, snap);
    }
    Ok(Dataset { snapshots, instances })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_corpus_is_valid_and_deterministic() {
        let cfg = SynthConfig {
            designs: 3,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        a.validate().unwrap();
        assert_eq!(a.instances.len(), 36);
        for s in a.snapshots.values() {
            assert!((28..=34).contains(&s.blocks.len()), "{}", s.blocks.len());
        }
        assert_eq!(a, generate(&cfg).unwrap());
    }
}
