// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Role, Timing};
use crate::sv::{def_use_with_timing, BlockKind, Direction, PortConn, Snapshot};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DtgEdge {
    pub src: String,
    pub dst: String,
    pub via_signal: String,
    pub role: Role,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignTopologyGraph {
    pub snapshot_id: String,
    pub nodes: Vec<String>,
    pub edges: Vec<DtgEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtgStats {
    pub nodes: usize,
    pub edges: usize,
}

impl DesignTopologyGraph {
    pub fn stats(&self) -> DtgStats {
        DtgStats {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
        }
    }

    /// Edges as node indices, in edge-list order.
    pub fn indexed_edges(&self) -> Vec<(usize, usize, Role, Timing)> {
        let pos: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        self.edges
            .iter()
            .map(|e| (pos[e.src.as_str()], pos[e.dst.as_str()], e.role, e.timing))
            .collect()
    }
}

type Key = (String, String);

/// Define–use edges between the blocks of a snapshot. Signals resolve
/// lexically per module; port connections of instantiations whose module
/// is in the snapshot forward definers across the hierarchy.
pub fn build_dtg(snapshot: &Snapshot) -> DesignTopologyGraph {
    let blocks = &snapshot.blocks;
    let infos = crate::par::map(blocks, def_use_with_timing);
    let mut definers: BTreeMap<Key, BTreeSet<usize>> = BTreeMap::new();
    let mut users: BTreeMap<Key, BTreeMap<usize, Role>> = BTreeMap::new();
    let mut timing = Vec::with_capacity(blocks.len());
    for (i, (b, (du, edge_triggered))) in blocks.iter().zip(&infos).enumerate() {
        for s in &du.defined {
            definers
                .entry((b.module_name.clone(), s.clone()))
                .or_default()
                .insert(i);
        }
        for (s, role) in &du.roles {
            users
                .entry((b.module_name.clone(), s.clone()))
                .or_default()
                .insert(i, *role);
        }
        let seq = b.kind == BlockKind::AlwaysFf || (b.kind == BlockKind::AlwaysGeneric && *edge_triggered);
        timing.push(if seq { Timing::Sequential } else { Timing::Combinational });
    }

    // (from, to): definers of `from` also define `to`
    let mut forwards: Vec<(Key, Key)> = Vec::new();
    for m in &snapshot.modules {
        for inst in &m.instances {
            let Some(child) = snapshot.module(&inst.module_type) else {
                continue;
            };
            let named: BTreeSet<&str> = inst
                .conns
                .iter()
                .filter_map(|c| match c {
                    PortConn::Named { port, .. } => Some(port.as_str()),
                    _ => None,
                })
                .collect();
            let mut pairs: Vec<(String, Vec<String>)> = Vec::new();
            for c in &inst.conns {
                match c {
                    PortConn::Named { port, signals } => pairs.push((port.clone(), signals.clone())),
                    PortConn::Positional { index, signals } => {
                        if let Some(port) = child.ports.get(*index) {
                            pairs.push((port.clone(), signals.clone()));
                        }
                    }
                    PortConn::Wildcard => {
                        for p in child.ports.iter().filter(|p| !named.contains(p.as_str())) {
                            pairs.push((p.clone(), vec![p.clone()]));
                        }
                    }
                }
            }
            for (port, signals) in pairs {
                let child_key = (child.name.clone(), port.clone());
                for s in signals {
                    let parent_key = (m.name.clone(), s);
                    match child.direction(&port) {
                        Some(Direction::Input) => forwards.push((parent_key, child_key.clone())),
                        Some(Direction::Output) => forwards.push((child_key.clone(), parent_key)),
                        Some(Direction::Inout) => {
                            forwards.push((parent_key.clone(), child_key.clone()));
                            forwards.push((child_key.clone(), parent_key));
                        }
                        None => {}
                    }
                }
            }
        }
    }
    loop {
        let mut changed = false;
        for (from, to) in &forwards {
            let Some(src) = definers.get(from).cloned() else {
                continue;
            };
            let dst = definers.entry(to.clone()).or_default();
            for d in src {
                changed |= dst.insert(d);
            }
        }
        if !changed {
            break;
        }
    }

    let mut edges = Vec::new();
    for (key, us) in &users {
        let Some(ds) = definers.get(key) else { continue };
        for &u in ds {
            for (&v, &role) in us {
                if u != v {
                    edges.push((u, v, key.1.clone(), role));
                }
            }
        }
    }
    edges.sort();
    DesignTopologyGraph {
        snapshot_id: snapshot.snapshot_id.clone(),
        nodes: blocks.iter().map(|b| b.block_id.clone()).collect(),
        edges: edges
            .into_iter()
            .map(|(u, v, via_signal, role)| DtgEdge {
                src: blocks[u].block_id.clone(),
                dst: blocks[v].block_id.clone(),
                via_signal,
                role,
                timing: timing[v],
            })
            .collect(),
    }
}
