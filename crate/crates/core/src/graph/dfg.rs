// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{fnv1a64, Role, Timing};
use crate::sv::ast::{BlockAst, EventItem, Expr, Stmt};
use crate::sv::{parse_block_ast, Decl, DeclCategory, RtlBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Signal,
    Operator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Parameter,
    Port,
    LocalSignal,
    Constant,
    Operator,
}

impl Category {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorType {
    MemberAccess,
    UnaryOp,
    BinaryOp,
    TernaryOp,
    Concat,
    Index,
    Call,
    None,
}

impl OperatorType {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgNode {
    pub node_id: usize,
    pub kind: NodeKind,
    pub category: Category,
    pub operator_type: OperatorType,
    pub bit_width: Option<u32>,
    pub hashed_name: u64,
    /// Signal name, literal text or operator symbol.
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DfgEdge {
    pub src: usize,
    pub dst: usize,
    pub role: Role,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDfg {
    pub block_id: String,
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<DfgEdge>,
}

/// Builds the data-flow graph of one block. Unknown widths stay absent;
/// text outside the parsed subset degrades to isolated signal nodes.
pub fn build_block_dfg(block: &RtlBlock, decls: &BTreeMap<String, Decl>, vocab: u64) -> BlockDfg {
    let mut b = Builder {
        decls,
        vocab: vocab.max(2),
        nodes: Vec::new(),
        edges: Vec::new(),
        seen: BTreeSet::new(),
        signals: BTreeMap::new(),
    };
    match parse_block_ast(&block.text) {
        Ok(ast) => b.block(&ast),
        Err(_) => {
            for s in block.defined.iter().chain(&block.used) {
                b.signal(s);
            }
        }
    }
    BlockDfg {
        block_id: block.block_id.clone(),
        nodes: b.nodes,
        edges: b.edges,
    }
}

struct Builder<'a> {
    decls: &'a BTreeMap<String, Decl>,
    vocab: u64,
    nodes: Vec<DfgNode>,
    edges: Vec<DfgEdge>,
    seen: BTreeSet<DfgEdge>,
    signals: BTreeMap<String, usize>,
}

#[derive(Clone, Default)]
struct Ctx {
    guards: Vec<usize>,
    events: Vec<(usize, Role)>,
    sequential: bool,
}

impl Builder<'_> {
    fn push(&mut self, kind: NodeKind, category: Category, op: OperatorType, width: Option<u32>, label: &str) -> usize {
        let id = self.nodes.len();
        self.nodes.push(DfgNode {
            node_id: id,
            kind,
            category,
            operator_type: op,
            bit_width: width,
            hashed_name: fnv1a64(label.as_bytes()) % self.vocab,
            label: label.to_string(),
        });
        id
    }

    fn signal(&mut self, name: &str) -> usize {
        if let Some(&id) = self.signals.get(name) {
            return id;
        }
        let (category, width) = match self.decls.get(name) {
            Some(d) => (
                match d.category {
                    DeclCategory::Parameter => Category::Parameter,
                    DeclCategory::Port => Category::Port,
                    DeclCategory::Local => Category::LocalSignal,
                },
                d.width,
            ),
            None => (Category::LocalSignal, None),
        };
        let id = self.push(NodeKind::Signal, category, OperatorType::None, width, name);
        self.signals.insert(name.to_string(), id);
        id
    }

    fn edge(&mut self, src: usize, dst: usize, role: Role, timing: Timing) {
        let e = DfgEdge { src, dst, role, timing };
        if src != dst && self.seen.insert(e) {
            self.edges.push(e);
        }
    }

    fn op(&mut self, ty: OperatorType, symbol: &str, inputs: &[(usize, Role)]) -> usize {
        let id = self.push(NodeKind::Operator, Category::Operator, ty, None, symbol);
        for &(src, role) in inputs {
            self.edge(src, id, role, Timing::Combinational);
        }
        id
    }

    /// Node producing the value of `e`; edges inside carry `role`.
    fn expr(&mut self, e: &Expr, role: Role) -> usize {
        match e {
            Expr::Ident(n) => self.signal(n),
            Expr::Literal { text, width } => {
                self.push(NodeKind::Signal, Category::Constant, OperatorType::None, *width, text)
            }
            Expr::Str(s) => self.push(NodeKind::Signal, Category::Constant, OperatorType::None, None, s),
            Expr::Unary { op, arg } => {
                let a = self.expr(arg, role);
                self.op(OperatorType::UnaryOp, op, &[(a, role)])
            }
            Expr::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs, role);
                let r = self.expr(rhs, role);
                self.op(OperatorType::BinaryOp, op, &[(l, role), (r, role)])
            }
            Expr::Ternary { cond, then, els } => {
                let c = self.expr(cond, Role::Predicate);
                let t = self.expr(then, role);
                let f = self.expr(els, role);
                self.op(
                    OperatorType::TernaryOp,
                    "?:",
                    &[(c, Role::Predicate), (t, role), (f, role)],
                )
            }
            Expr::Concat(items) => {
                let ins: Vec<_> = items.iter().map(|i| (self.expr(i, role), role)).collect();
                self.op(OperatorType::Concat, "{}", &ins)
            }
            Expr::Replicate { count, items } => {
                let mut ins = vec![(self.expr(count, role), role)];
                ins.extend(items.iter().map(|i| (self.expr(i, role), role)).collect::<Vec<_>>());
                self.op(OperatorType::Concat, "{{}}", &ins)
            }
            Expr::Index { base, indices } => {
                let mut ins = vec![(self.expr(base, role), role)];
                ins.extend(indices.iter().map(|i| (self.expr(i, role), role)).collect::<Vec<_>>());
                self.op(OperatorType::Index, "[]", &ins)
            }
            Expr::Member { base, .. } => {
                let b = self.expr(base, role);
                self.op(OperatorType::MemberAccess, ".", &[(b, role)])
            }
            Expr::Call { name, args } => {
                let ins: Vec<_> = args.iter().map(|a| (self.expr(a, role), role)).collect();
                self.op(OperatorType::Call, name, &ins)
            }
        }
    }

    fn events(&mut self, events: &[EventItem], ctx: &mut Ctx) {
        for (e, role) in events.iter().zip(crate::sv::event_roles(events)) {
            let n = self.expr(&e.expr, role);
            ctx.events.push((n, role));
        }
    }

    fn block(&mut self, ast: &BlockAst) {
        let mut ctx = Ctx {
            sequential: ast.edge_triggered(),
            ..Ctx::default()
        };
        self.events(&ast.events, &mut ctx);
        self.stmt(&ast.body, &ctx);
    }

    fn stmt(&mut self, s: &Stmt, ctx: &Ctx) {
        match s {
            Stmt::Block(v) => v.iter().for_each(|s| self.stmt(s, ctx)),
            Stmt::If { cond, then, els } => {
                let g = self.expr(cond, Role::Predicate);
                let mut inner = ctx.clone();
                inner.guards.push(g);
                self.stmt(then, &inner);
                if let Some(e) = els {
                    self.stmt(e, &inner);
                }
            }
            Stmt::Case { subject, items } => {
                let g = self.expr(subject, Role::Predicate);
                for item in items {
                    let mut inner = ctx.clone();
                    inner.guards.push(g);
                    for l in &item.labels {
                        let n = self.expr(l, Role::Predicate);
                        inner.guards.push(n);
                    }
                    self.stmt(&item.body, &inner);
                }
            }
            Stmt::Loop { init, cond, step, body } => {
                init.iter().for_each(|s| self.stmt(s, ctx));
                let mut inner = ctx.clone();
                if let Some(c) = cond {
                    let g = self.expr(c, Role::Predicate);
                    inner.guards.push(g);
                }
                step.iter().for_each(|s| self.stmt(s, &inner));
                self.stmt(body, &inner);
            }
            Stmt::Assign { lhs, rhs, nonblocking } => {
                let timing = if ctx.sequential && *nonblocking {
                    Timing::Sequential
                } else {
                    Timing::Combinational
                };
                let value = self.expr(rhs, Role::Data);
                let mut reads = Vec::new();
                lhs.lvalue_reads(&mut reads);
                let reads: Vec<usize> = reads.into_iter().map(|r| self.expr(r, Role::Data)).collect();
                let mut targets = Vec::new();
                lhs.lvalue_targets(&mut targets);
                for t in targets {
                    let t = self.signal(&t);
                    self.edge(value, t, Role::Data, timing);
                    for &r in &reads {
                        self.edge(r, t, Role::Data, timing);
                    }
                    for &g in &ctx.guards {
                        self.edge(g, t, Role::Predicate, timing);
                    }
                    for &(ev, role) in &ctx.events {
                        self.edge(ev, t, role, timing);
                    }
                }
            }
            Stmt::Decl { init, .. } => init.iter().for_each(|s| self.stmt(s, ctx)),
            Stmt::Timed { events, body } => {
                let mut inner = ctx.clone();
                self.events(events, &mut inner);
                self.stmt(body, &inner);
            }
            Stmt::Expr(e) => {
                self.expr(e, Role::Data);
            }
            Stmt::Empty => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sv::{parse_file, SourceFile};

    fn dfg_of(src: &str) -> BlockDfg {
        let f = parse_file(&SourceFile::new("t.sv", src)).unwrap();
        build_block_dfg(&f.blocks[0], &f.modules[0].decls, 4096)
    }

    fn labelled(d: &BlockDfg) -> Vec<(String, String, Role, Timing)> {
        let mut v: Vec<_> = d
            .edges
            .iter()
            .map(|e| {
                (
                    d.nodes[e.src].label.clone(),
                    d.nodes[e.dst].label.clone(),
                    e.role,
                    e.timing,
                )
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn and_gate() {
        let d = dfg_of("module m(input a, b, output y); assign y = a & b; endmodule");
        let labels: Vec<_> = d.nodes.iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, vec!["a", "b", "&", "y"]);
        assert_eq!(d.nodes[2].operator_type, OperatorType::BinaryOp);
        assert_eq!(d.nodes[0].category, Category::Port);
        use Role::Data;
        use Timing::Combinational as C;
        assert_eq!(
            labelled(&d),
            vec![
                ("&".into(), "y".into(), Data, C),
                ("a".into(), "&".into(), Data, C),
                ("b".into(), "&".into(), Data, C)
            ]
        );
    }

    #[test]
    fn flop() {
        let d = dfg_of("module m; always_ff @(posedge clk) q <= d; endmodule");
        assert_eq!(d.nodes.len(), 3);
        assert_eq!(
            labelled(&d),
            vec![
                ("clk".into(), "q".into(), Role::Clock, Timing::Sequential),
                ("d".into(), "q".into(), Role::Data, Timing::Sequential),
            ]
        );
    }

    #[test]
    fn constant_source() {
        let d = dfg_of("module m; assign y = 1'b0; endmodule");
        assert_eq!(d.nodes[0].category, Category::Constant);
        assert_eq!(d.nodes[0].bit_width, Some(1));
        assert_eq!(
            labelled(&d),
            vec![("1'b0".into(), "y".into(), Role::Data, Timing::Combinational)]
        );
    }

    #[test]
    fn guarded_counter_keeps_one_node_per_signal() {
        let d = dfg_of("module m; logic [3:0] q; always_ff @(posedge clk or negedge rst_n) if (!rst_n) q <= '0; else if (en) q <= q + 1; endmodule");
        let q: Vec<_> = d.nodes.iter().filter(|n| n.label == "q").collect();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].bit_width, Some(4));
        let e = labelled(&d);
        assert!(e.contains(&("rst_n".into(), "q".into(), Role::Reset, Timing::Sequential)));
        assert!(e.contains(&("en".into(), "q".into(), Role::Predicate, Timing::Sequential)));
        assert!(e.contains(&("rst_n".into(), "!".into(), Role::Predicate, Timing::Combinational)));
        assert!(e.contains(&("q".into(), "+".into(), Role::Data, Timing::Combinational)));
        assert!(d.edges.iter().all(|e| e.src != e.dst));
    }

    #[test]
    fn whitespace_and_comments_do_not_matter() {
        let a = dfg_of("module m; assign y = (a + b) ^ c[3:0]; endmodule");
        let b = dfg_of("module m; assign y =\n  // sum\n  (a+b)  ^ /* sel */ c[3 : 0] ; endmodule");
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.edges, b.edges);
    }
}
