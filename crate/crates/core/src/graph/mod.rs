// SPDX-License-Identifier: Apache-2.0

//! Block-local data-flow graphs and the design-wide topology graph.

mod dfg;
mod dtg;

use serde::{Deserialize, Serialize};

pub use dfg::{build_block_dfg, BlockDfg, Category, DfgEdge, DfgNode, NodeKind, OperatorType};
pub use dtg::{build_dtg, DesignTopologyGraph, DtgEdge, DtgStats};

pub const DEFAULT_VOCAB: u64 = 4096;
pub const DEFAULT_WIDTH_CAP: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Data,
    Clock,
    Event,
    Predicate,
    Reset,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Data, Role::Clock, Role::Event, Role::Predicate, Role::Reset];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    Combinational,
    Sequential,
}

impl Timing {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("domain error: {0}")]
    Domain(String),
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// 64-bit FNV-1a of the name, reduced modulo `vocab`.
pub fn hash_identifier(name: &str, vocab: u64) -> Result<u64, GraphError> {
    if vocab < 2 {
        return Err(GraphError::Domain(format!("vocabulary size {vocab} < 2")));
    }
    Ok(fnv1a64(name.as_bytes()) % vocab)
}

/// `log2(1 + min(w, cap)) / log2(1 + cap)`.
pub fn normalize_bitwidth(w: u32, cap: u32) -> Result<f64, GraphError> {
    if w < 1 || cap < 1 {
        return Err(GraphError::Domain(format!("bit width {w} with cap {cap}")));
    }
    Ok((1.0 + w.min(cap) as f64).log2() / (1.0 + cap as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        assert_eq!(hash_identifier("", 4096).unwrap(), 0xcbf29ce484222325 % 4096);
        assert!(hash_identifier("clk", 1).is_err());
    }

    #[test]
    fn bitwidth_normalization() {
        assert_eq!(normalize_bitwidth(256, 256).unwrap(), 1.0);
        assert_eq!(normalize_bitwidth(1, 1).unwrap(), 1.0);
        assert_eq!(normalize_bitwidth(7, 255).unwrap(), 0.375);
        assert_eq!(normalize_bitwidth(4096, 256).unwrap(), 1.0);
        assert!(normalize_bitwidth(0, 256).is_err());
    }
}
