// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use super::ast::{BlockAst, EventItem, Expr, Stmt};
use super::{parse_block_ast, RtlBlock, SvError};
use crate::graph::Role;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefUse {
    pub defined: BTreeSet<String>,
    pub used: BTreeSet<String>,
    /// How each used signal is consumed: the sensitivity-list role when it
    /// has one, `Data` if read in any data position, `Predicate` otherwise.
    pub roles: BTreeMap<String, Role>,
}

pub fn extract_def_use(block: &RtlBlock) -> Result<DefUse, SvError> {
    Ok(def_use_of(&parse_block_ast(&block.text)?))
}

pub fn signal_roles(block: &RtlBlock) -> Result<BTreeMap<String, Role>, SvError> {
    Ok(extract_def_use(block)?.roles)
}

/// Def/use plus whether the sensitivity list is edge-triggered. Blocks
/// outside the parsed subset fall back to their stored sets, all `Data`.
pub fn def_use_with_timing(block: &RtlBlock) -> (DefUse, bool) {
    match parse_block_ast(&block.text) {
        Ok(ast) => (def_use_of(&ast), ast.edge_triggered()),
        Err(_) => {
            let roles = block.used.iter().map(|s| (s.clone(), Role::Data)).collect();
            (
                DefUse {
                    defined: block.defined.clone(),
                    used: block.used.clone(),
                    roles,
                },
                false,
            )
        }
    }
}

#[derive(Default)]
struct Walker {
    defined: BTreeSet<String>,
    data: BTreeSet<String>,
    pred: BTreeSet<String>,
    event: BTreeMap<String, Role>,
    locals: BTreeSet<String>,
}

/// Role of each sensitivity entry: the first edge is the clock, later edges
/// are resets, level entries are plain events.
pub fn event_roles(events: &[EventItem]) -> Vec<Role> {
    let mut seen_edge = false;
    events
        .iter()
        .map(|e| match e.edge {
            Some(_) if !seen_edge => {
                seen_edge = true;
                Role::Clock
            }
            Some(_) => Role::Reset,
            None => Role::Event,
        })
        .collect()
}

pub(crate) fn def_use_of(ast: &BlockAst) -> DefUse {
    let mut w = Walker::default();
    w.events(&ast.events);
    w.stmt(&ast.body);
    let Walker {
        mut defined,
        data,
        pred,
        event,
        locals,
    } = w;
    defined.retain(|s| !locals.contains(s));
    let mut roles = BTreeMap::new();
    for s in pred.iter().chain(&data).chain(event.keys()) {
        if locals.contains(s) {
            continue;
        }
        let role = if let Some(r) = event.get(s) {
            *r
        } else if data.contains(s) {
            Role::Data
        } else {
            Role::Predicate
        };
        roles.insert(s.clone(), role);
    }
    DefUse {
        defined,
        used: roles.keys().cloned().collect(),
        roles,
    }
}

impl Walker {
    fn events(&mut self, events: &[EventItem]) {
        for (e, role) in events.iter().zip(event_roles(events)) {
            let mut ids = Vec::new();
            e.expr.idents(&mut ids);
            for id in ids {
                self.event.entry(id.to_string()).or_insert(role);
            }
        }
    }

    fn read(&mut self, e: &Expr, guard: bool) {
        match e {
            Expr::Ident(n) => {
                if guard {
                    self.pred.insert(n.clone());
                } else {
                    self.data.insert(n.clone());
                }
            }
            Expr::Ternary { cond, then, els } => {
                self.read(cond, true);
                self.read(then, guard);
                self.read(els, guard);
            }
            other => {
                let mut ids = Vec::new();
                other.idents(&mut ids);
                // ternaries nested deeper still mark their conditions
                let mut conds = Vec::new();
                collect_ternary_conds(other, &mut conds);
                let mut cond_ids = BTreeSet::new();
                for c in conds {
                    let mut v = Vec::new();
                    c.idents(&mut v);
                    cond_ids.extend(v.into_iter().map(str::to_string));
                }
                for id in ids {
                    if guard || cond_ids.contains(id) {
                        self.pred.insert(id.to_string());
                    } else {
                        self.data.insert(id.to_string());
                    }
                }
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Block(v) => v.iter().for_each(|s| self.stmt(s)),
            Stmt::If { cond, then, els } => {
                self.read(cond, true);
                self.stmt(then);
                if let Some(e) = els {
                    self.stmt(e);
                }
            }
            Stmt::Case { subject, items } => {
                self.read(subject, true);
                for item in items {
                    for l in &item.labels {
                        self.read(l, true);
                    }
                    self.stmt(&item.body);
                }
            }
            Stmt::Loop { init, cond, step, body } => {
                init.iter().for_each(|s| self.stmt(s));
                if let Some(c) = cond {
                    self.read(c, true);
                }
                step.iter().for_each(|s| self.stmt(s));
                self.stmt(body);
            }
            Stmt::Assign { lhs, rhs, .. } => {
                let mut targets = Vec::new();
                lhs.lvalue_targets(&mut targets);
                self.defined.extend(targets);
                let mut reads = Vec::new();
                lhs.lvalue_reads(&mut reads);
                for r in reads {
                    self.read(r, false);
                }
                self.read(rhs, false);
            }
            Stmt::Decl { names, init } => {
                self.locals.extend(names.iter().cloned());
                init.iter().for_each(|s| self.stmt(s));
            }
            Stmt::Timed { events, body } => {
                self.events(events);
                self.stmt(body);
            }
            Stmt::Expr(e) => self.read(e, false),
            Stmt::Empty => {}
        }
    }
}

fn collect_ternary_conds<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Ternary { cond, then, els } => {
            out.push(cond);
            collect_ternary_conds(cond, out);
            collect_ternary_conds(then, out);
            collect_ternary_conds(els, out);
        }
        Expr::Unary { arg, .. } => collect_ternary_conds(arg, out),
        Expr::Binary { lhs, rhs, .. } => {
            collect_ternary_conds(lhs, out);
            collect_ternary_conds(rhs, out);
        }
        Expr::Concat(items) | Expr::Call { args: items, .. } => {
            items.iter().for_each(|i| collect_ternary_conds(i, out))
        }
        Expr::Replicate { count, items } => {
            collect_ternary_conds(count, out);
            items.iter().for_each(|i| collect_ternary_conds(i, out));
        }
        Expr::Index { base, indices } => {
            collect_ternary_conds(base, out);
            indices.iter().for_each(|i| collect_ternary_conds(i, out));
        }
        Expr::Member { base, .. } => collect_ternary_conds(base, out),
        Expr::Ident(_) | Expr::Literal { .. } | Expr::Str(_) => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn du(src: &str) -> DefUse {
        def_use_of(&parse_block_ast(src).unwrap())
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn continuous_assign() {
        let d = du("assign y = a & b;");
        assert_eq!(d.defined, set(&["y"]));
        assert_eq!(d.used, set(&["a", "b"]));
    }

    #[test]
    fn counter_defines_and_uses_q() {
        let d = du("always_ff @(posedge clk) if (en) q <= q + 1;");
        assert_eq!(d.defined, set(&["q"]));
        assert_eq!(d.used, set(&["clk", "en", "q"]));
        assert_eq!(d.roles["clk"], Role::Clock);
        assert_eq!(d.roles["en"], Role::Predicate);
        assert_eq!(d.roles["q"], Role::Data);
    }

    #[test]
    fn display_only() {
        let d = du("always @(posedge clk) $display(\"%d\", a + b);");
        assert!(d.defined.is_empty());
        assert_eq!(d.used, set(&["a", "b", "clk"]));
    }

    #[test]
    fn reset_roles_locals_and_selects() {
        let d = du(
            "always_ff @(posedge clk_i or negedge rst_ni) begin\n  automatic int k = 2;\n  if (!rst_ni) mem[idx] <= '0;\n  else mem[idx] <= sel ? x : y;\nend",
        );
        assert_eq!(d.defined, set(&["mem"]));
        assert_eq!(d.used, set(&["clk_i", "idx", "rst_ni", "sel", "x", "y"]));
        assert_eq!(d.roles["rst_ni"], Role::Reset);
        assert_eq!(d.roles["sel"], Role::Predicate);
        assert_eq!(d.roles["idx"], Role::Data);
    }
}
