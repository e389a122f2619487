// SPDX-License-Identifier: Apache-2.0

//! Statement and expression trees for one block, and the recursive-descent
//! parser that builds them from a token slice.

use std::collections::BTreeMap;

use super::lexer::{literal_value, literal_width, TokKind, Token};
use super::BlockKind;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Ident(String),
    Literal {
        text: String,
        width: Option<u32>,
    },
    Str(String),
    Unary {
        op: String,
        arg: Box<Expr>,
    },
    Binary {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Ternary {
        cond: Box<Expr>,
        then: Box<Expr>,
        els: Box<Expr>,
    },
    Concat(Vec<Expr>),
    Replicate {
        count: Box<Expr>,
        items: Vec<Expr>,
    },
    /// Bit, part or indexed-part select; `indices` holds every bound.
    Index {
        base: Box<Expr>,
        indices: Vec<Expr>,
    },
    Member {
        base: Box<Expr>,
        field: String,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
}

impl Expr {
    /// The signal an lvalue ultimately writes (`a[3].f` → `a`).
    pub fn lvalue_targets(&self, out: &mut Vec<String>) {
        match self {
            Expr::Ident(n) => out.push(n.clone()),
            Expr::Index { base, .. } | Expr::Member { base, .. } => base.lvalue_targets(out),
            Expr::Concat(items) => items.iter().for_each(|e| e.lvalue_targets(out)),
            _ => {}
        }
    }

    /// Expressions read while writing through this lvalue (select indices).
    pub fn lvalue_reads<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Expr::Index { base, indices } => {
                base.lvalue_reads(out);
                out.extend(indices.iter());
            }
            Expr::Member { base, .. } => base.lvalue_reads(out),
            Expr::Concat(items) => items.iter().for_each(|e| e.lvalue_reads(out)),
            _ => {}
        }
    }

    /// Visits every identifier read by this expression.
    pub fn idents<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Ident(n) => out.push(n),
            Expr::Literal { .. } | Expr::Str(_) => {}
            Expr::Unary { arg, .. } => arg.idents(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.idents(out);
                rhs.idents(out);
            }
            Expr::Ternary { cond, then, els } => {
                cond.idents(out);
                then.idents(out);
                els.idents(out);
            }
            Expr::Concat(items) => items.iter().for_each(|e| e.idents(out)),
            Expr::Replicate { count, items } => {
                count.idents(out);
                items.iter().for_each(|e| e.idents(out));
            }
            Expr::Index { base, indices } => {
                base.idents(out);
                indices.iter().for_each(|e| e.idents(out));
            }
            Expr::Member { base, .. } => base.idents(out),
            Expr::Call { args, .. } => args.iter().for_each(|e| e.idents(out)),
        }
    }

    /// Constant-folds integer arithmetic over literals and known parameters.
    pub fn eval(&self, params: &BTreeMap<String, i64>) -> Option<i64> {
        match self {
            Expr::Literal { text, .. } => literal_value(text),
            Expr::Ident(n) => params.get(n).copied(),
            Expr::Unary { op, arg } => {
                let v = arg.eval(params)?;
                match op.as_str() {
                    "-" => v.checked_neg(),
                    "+" => Some(v),
                    _ => None,
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (lhs.eval(params)?, rhs.eval(params)?);
                match op.as_str() {
                    "+" => a.checked_add(b),
                    "-" => a.checked_sub(b),
                    "*" => a.checked_mul(b),
                    "/" if b != 0 => Some(a / b),
                    "%" if b != 0 => Some(a % b),
                    "<<" if (0..63).contains(&b) => a.checked_shl(b as u32),
                    ">>" if (0..63).contains(&b) => Some(a >> b),
                    "**" if (0..63).contains(&b) => a.checked_pow(b as u32),
                    _ => None,
                }
            }
            Expr::Call { name, args } if name == "$clog2" && args.len() == 1 => {
                let v = args[0].eval(params)?;
                if v <= 1 {
                    Some(0)
                } else {
                    Some(64 - (v - 1).leading_zeros() as i64)
                }
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Pos,
    Neg,
    Any,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventItem {
    pub edge: Option<Edge>,
    pub expr: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseItem {
    /// Empty for `default`.
    pub labels: Vec<Expr>,
    pub body: Stmt,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Block(Vec<Stmt>),
    If {
        cond: Expr,
        then: Box<Stmt>,
        els: Option<Box<Stmt>>,
    },
    Case {
        subject: Expr,
        items: Vec<CaseItem>,
    },
    /// `for`/`while`/`repeat`/`foreach` collapse to a guarded body.
    Loop {
        init: Vec<Stmt>,
        cond: Option<Expr>,
        step: Vec<Stmt>,
        body: Box<Stmt>,
    },
    Assign {
        lhs: Expr,
        rhs: Expr,
        nonblocking: bool,
    },
    /// Block-local variable declarations; their names are not signals.
    Decl {
        names: Vec<String>,
        init: Vec<Stmt>,
    },
    /// Event or delay control in front of a statement.
    Timed {
        events: Vec<EventItem>,
        body: Box<Stmt>,
    },
    Expr(Expr),
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockAst {
    pub kind: BlockKind,
    /// Sensitivity list of an `always` header; empty for `@*` and
    /// `always_comb`.
    pub events: Vec<EventItem>,
    pub body: Stmt,
}

impl BlockAst {
    pub fn edge_triggered(&self) -> bool {
        self.events.iter().any(|e| e.edge.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub byte: usize,
    pub msg: String,
}

type PResult<T> = Result<T, ParseError>;

const DATA_TYPES: &[&str] = &[
    "logic",
    "bit",
    "reg",
    "int",
    "integer",
    "byte",
    "shortint",
    "longint",
    "automatic",
    "static",
    "var",
    "const",
    "real",
    "time",
    "string",
    "signed",
    "unsigned",
];

pub struct Parser<'a> {
    pub(super) src: &'a str,
    pub(super) toks: Vec<Token>,
    pub(super) pos: usize,
}

impl<'a> Parser<'a> {
    /// Conditional-compilation directives are dropped so that both arms of
    /// an `` `ifdef `` parse as ordinary code.
    pub fn new(src: &'a str, toks: &[Token]) -> Self {
        let mut kept = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            let t = &toks[i];
            if t.kind == TokKind::Directive {
                match t.text(src) {
                    "`ifdef" | "`ifndef" | "`elsif" => {
                        i += 2;
                        continue;
                    }
                    "`else" | "`endif" => {
                        i += 1;
                        continue;
                    }
                    _ => {}
                }
            }
            kept.push(t.clone());
            i += 1;
        }
        Parser {
            src,
            toks: kept,
            pos: 0,
        }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub(super) fn peek(&self) -> &str {
        self.peek_at(0)
    }

    pub(super) fn peek_at(&self, k: usize) -> &str {
        self.toks.get(self.pos + k).map_or("", |t| t.text(self.src))
    }

    pub(super) fn kind_at(&self, k: usize) -> Option<TokKind> {
        self.toks.get(self.pos + k).map(|t| t.kind)
    }

    pub(super) fn bump(&mut self) -> String {
        let s = self.peek().to_string();
        self.pos += 1;
        s
    }

    pub(super) fn eat(&mut self, text: &str) -> bool {
        if self.peek() == text && !self.at_end() {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(super) fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            byte: self.toks.get(self.pos).map_or(self.src.len(), |t| t.start),
            msg: msg.into(),
        }
    }

    pub(super) fn expect(&mut self, text: &str) -> PResult<()> {
        if self.eat(text) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{text}`, found `{}`", self.peek())))
        }
    }

    pub(super) fn skip_label(&mut self) {
        if self.peek() == ":" && self.kind_at(1) == Some(TokKind::Ident) {
            self.pos += 2;
        }
    }

    /// Skips a balanced `( ... )` group starting at the current token.
    pub(super) fn skip_parens(&mut self) -> PResult<()> {
        self.expect("(")?;
        let mut depth = 1;
        while depth > 0 {
            if self.at_end() {
                return Err(self.err("unbalanced parentheses"));
            }
            match self.bump().as_str() {
                "(" => depth += 1,
                ")" => depth -= 1,
                _ => {}
            }
        }
        Ok(())
    }

    // ---- blocks ----

    pub fn parse_block(&mut self) -> PResult<BlockAst> {
        let head = self.bump();
        let kind = match head.as_str() {
            "assign" => {
                let mut assigns = Vec::new();
                self.skip_delay_or_strength()?;
                loop {
                    let lhs = self.parse_postfix()?;
                    self.expect("=")?;
                    self.skip_delay_or_strength()?;
                    let rhs = self.parse_expr()?;
                    assigns.push(Stmt::Assign {
                        lhs,
                        rhs,
                        nonblocking: false,
                    });
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(";")?;
                let body = if assigns.len() == 1 {
                    assigns.pop().unwrap()
                } else {
                    Stmt::Block(assigns)
                };
                return Ok(BlockAst {
                    kind: BlockKind::Assign,
                    events: Vec::new(),
                    body,
                });
            }
            "always_ff" => BlockKind::AlwaysFf,
            "always_comb" => BlockKind::AlwaysComb,
            "always" | "always_latch" => BlockKind::AlwaysGeneric,
            other => return Err(self.err(format!("`{other}` does not open a block"))),
        };
        let mut events = Vec::new();
        let body = if self.peek() == "@" {
            self.pos += 1;
            events = self.parse_event_control()?;
            self.parse_stmt()?
        } else {
            self.parse_stmt()?
        };
        Ok(BlockAst { kind, events, body })
    }

    fn skip_delay_or_strength(&mut self) -> PResult<()> {
        if self.peek() == "("
            && matches!(
                self.peek_at(1),
                "strong0"
                    | "strong1"
                    | "weak0"
                    | "weak1"
                    | "pull0"
                    | "pull1"
                    | "supply0"
                    | "supply1"
                    | "highz0"
                    | "highz1"
            )
        {
            self.skip_parens()?;
        }
        if self.eat("#") {
            if self.peek() == "(" {
                self.skip_parens()?;
            } else {
                self.pos += 1;
            }
        }
        Ok(())
    }

    /// After `@`: `*`, `(*)`, `(ev or ev, ...)`, or a bare identifier.
    fn parse_event_control(&mut self) -> PResult<Vec<EventItem>> {
        if self.eat("*") {
            return Ok(Vec::new());
        }
        if self.peek() != "(" {
            let e = self.parse_postfix()?;
            return Ok(vec![EventItem { edge: None, expr: e }]);
        }
        self.pos += 1;
        if self.eat("*") {
            self.expect(")")?;
            return Ok(Vec::new());
        }
        let mut items = Vec::new();
        loop {
            let edge = match self.peek() {
                "posedge" => Some(Edge::Pos),
                "negedge" => Some(Edge::Neg),
                "edge" => Some(Edge::Any),
                _ => None,
            };
            if edge.is_some() {
                self.pos += 1;
            }
            let expr = self.parse_binary(LOWEST_BINARY)?;
            if self.eat("iff") {
                self.parse_expr()?;
            }
            items.push(EventItem { edge, expr });
            if !(self.eat("or") || self.eat(",")) {
                break;
            }
        }
        self.expect(")")?;
        Ok(items)
    }

    // ---- statements ----

    pub fn parse_stmt(&mut self) -> PResult<Stmt> {
        // statement labels `name: stmt`
        if self.kind_at(0) == Some(TokKind::Ident) && self.peek_at(1) == ":" && self.peek_at(2) != ":" {
            self.pos += 2;
        }
        match self.peek() {
            "begin" | "fork" => {
                let closing: &[&str] = if self.peek() == "begin" {
                    &["end"]
                } else {
                    &["join", "join_any", "join_none"]
                };
                self.pos += 1;
                self.skip_label();
                let mut stmts = Vec::new();
                while !closing.contains(&self.peek()) {
                    if self.at_end() {
                        return Err(self.err("missing `end`"));
                    }
                    stmts.push(self.parse_stmt()?);
                }
                self.pos += 1;
                self.skip_label();
                Ok(Stmt::Block(stmts))
            }
            "unique" | "unique0" | "priority" => {
                self.pos += 1;
                self.parse_stmt()
            }
            "if" => {
                self.pos += 1;
                self.expect("(")?;
                let cond = self.parse_expr()?;
                self.expect(")")?;
                let then = Box::new(self.parse_stmt()?);
                let els = if self.eat("else") {
                    Some(Box::new(self.parse_stmt()?))
                } else {
                    None
                };
                Ok(Stmt::If { cond, then, els })
            }
            "case" | "casez" | "casex" | "randcase" => self.parse_case(),
            "for" => {
                self.pos += 1;
                self.expect("(")?;
                let mut init = Vec::new();
                while self.peek() != ";" {
                    init.push(self.parse_simple_stmt(&[",", ";"])?);
                    self.eat(",");
                }
                self.expect(";")?;
                let cond = if self.peek() == ";" {
                    None
                } else {
                    Some(self.parse_expr()?)
                };
                self.expect(";")?;
                let mut step = Vec::new();
                while self.peek() != ")" {
                    step.push(self.parse_simple_stmt(&[",", ")"])?);
                    self.eat(",");
                }
                self.expect(")")?;
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Loop { init, cond, step, body })
            }
            "while" | "repeat" | "foreach" => {
                self.pos += 1;
                self.expect("(")?;
                let cond = self.parse_expr()?;
                self.expect(")")?;
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Loop {
                    init: Vec::new(),
                    cond: Some(cond),
                    step: Vec::new(),
                    body,
                })
            }
            "forever" => {
                self.pos += 1;
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Loop {
                    init: Vec::new(),
                    cond: None,
                    step: Vec::new(),
                    body,
                })
            }
            "do" => {
                self.pos += 1;
                let body = Box::new(self.parse_stmt()?);
                self.expect("while")?;
                self.expect("(")?;
                let cond = self.parse_expr()?;
                self.expect(")")?;
                self.expect(";")?;
                Ok(Stmt::Loop {
                    init: Vec::new(),
                    cond: Some(cond),
                    step: Vec::new(),
                    body,
                })
            }
            "@" => {
                self.pos += 1;
                let events = self.parse_event_control()?;
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Timed { events, body })
            }
            "#" => {
                self.pos += 1;
                if self.peek() == "(" {
                    self.skip_parens()?;
                } else {
                    self.pos += 1;
                }
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Timed {
                    events: Vec::new(),
                    body,
                })
            }
            "wait" => {
                self.pos += 1;
                self.expect("(")?;
                let e = self.parse_expr()?;
                self.expect(")")?;
                let body = Box::new(self.parse_stmt()?);
                Ok(Stmt::Timed {
                    events: vec![EventItem { edge: None, expr: e }],
                    body,
                })
            }
            "assert" | "assume" | "cover" => self.parse_immediate_assertion(),
            "return" => {
                self.pos += 1;
                let e = if self.peek() == ";" {
                    None
                } else {
                    Some(self.parse_expr()?)
                };
                self.expect(";")?;
                Ok(e.map_or(Stmt::Empty, Stmt::Expr))
            }
            "break" | "continue" | "disable" => {
                while !self.eat(";") {
                    if self.at_end() {
                        return Err(self.err("missing `;`"));
                    }
                    self.pos += 1;
                }
                Ok(Stmt::Empty)
            }
            ";" => {
                self.pos += 1;
                Ok(Stmt::Empty)
            }
            _ if self.kind_at(0) == Some(TokKind::Directive) => {
                // macro invocation used as a statement
                self.pos += 1;
                if self.peek() == "(" {
                    self.skip_parens()?;
                }
                self.eat(";");
                Ok(Stmt::Empty)
            }
            _ => {
                let s = self.parse_simple_stmt(&[";"])?;
                self.expect(";")?;
                Ok(s)
            }
        }
    }

    fn parse_immediate_assertion(&mut self) -> PResult<Stmt> {
        self.pos += 1;
        if self.eat("final") || self.eat("property") {
        } else if self.eat("#") {
            self.pos += 1;
        }
        self.expect("(")?;
        let cond = self.parse_expr()?;
        self.expect(")")?;
        let mut stmts = vec![Stmt::Expr(cond)];
        if self.peek() != "else" {
            stmts.push(self.parse_stmt()?);
        }
        if self.eat("else") {
            stmts.push(self.parse_stmt()?);
        }
        Ok(Stmt::Block(stmts))
    }

    fn parse_case(&mut self) -> PResult<Stmt> {
        self.pos += 1;
        self.expect("(")?;
        let subject = self.parse_expr()?;
        self.expect(")")?;
        self.eat("inside");
        let mut items = Vec::new();
        while !self.eat("endcase") {
            if self.at_end() {
                return Err(self.err("missing `endcase`"));
            }
            let mut labels = Vec::new();
            if self.eat("default") {
                self.eat(":");
            } else {
                loop {
                    labels.push(self.parse_expr()?);
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(":")?;
            }
            let body = self.parse_stmt()?;
            items.push(CaseItem { labels, body });
        }
        Ok(Stmt::Case { subject, items })
    }

    /// Length of a user type name plus packed dims (`pkg::t_e [3:0]`) when
    /// it is followed by a declared name.
    pub(super) fn user_type_prefix(&self) -> Option<usize> {
        if self.kind_at(0) != Some(TokKind::Ident) {
            return None;
        }
        let mut k = 1;
        if self.peek_at(1) == "::" && self.kind_at(2) == Some(TokKind::Ident) {
            k = 3;
        }
        while self.peek_at(k) == "[" {
            let mut depth = 0;
            loop {
                match self.peek_at(k) {
                    "[" => depth += 1,
                    "]" => depth -= 1,
                    "" => return None,
                    _ => {}
                }
                k += 1;
                if depth == 0 {
                    break;
                }
            }
        }
        (self.kind_at(k) == Some(TokKind::Ident)).then_some(k)
    }

    fn looks_like_decl(&self) -> bool {
        if DATA_TYPES.contains(&self.peek()) || self.peek() == "typedef" {
            return true;
        }
        self.user_type_prefix()
            .is_some_and(|k| matches!(self.peek_at(k + 1), ";" | "=" | "," | "["))
    }

    fn parse_decl(&mut self, terminators: &[&str]) -> PResult<Stmt> {
        while DATA_TYPES.contains(&self.peek()) {
            self.pos += 1;
        }
        if let Some(k) = self.user_type_prefix() {
            self.pos += k;
        }
        self.skip_dims()?;
        let mut names = Vec::new();
        let mut init = Vec::new();
        loop {
            if self.kind_at(0) != Some(TokKind::Ident) {
                return Err(self.err("expected a declared name"));
            }
            let name = self.bump();
            self.skip_dims()?;
            if self.eat("=") {
                let rhs = self.parse_expr()?;
                init.push(Stmt::Assign {
                    lhs: Expr::Ident(name.clone()),
                    rhs,
                    nonblocking: false,
                });
            }
            names.push(name);
            // inside a `for` header the comma separates init items
            if terminators.contains(&",") || !self.eat(",") {
                break;
            }
        }
        Ok(Stmt::Decl { names, init })
    }

    /// Skips exactly one `[ ... ]` group.
    pub(super) fn skip_dims_once(&mut self) -> PResult<()> {
        let mut depth = 0;
        loop {
            if self.at_end() {
                return Err(self.err("unbalanced brackets"));
            }
            match self.bump().as_str() {
                "[" => depth += 1,
                "]" => depth -= 1,
                _ => {}
            }
            if depth == 0 {
                return Ok(());
            }
        }
    }

    pub(super) fn skip_dims(&mut self) -> PResult<()> {
        while self.peek() == "[" {
            let mut depth = 0;
            loop {
                if self.at_end() {
                    return Err(self.err("unbalanced brackets"));
                }
                match self.bump().as_str() {
                    "[" => depth += 1,
                    "]" => depth -= 1,
                    _ => {}
                }
                if depth == 0 {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Assignment, increment, declaration or call, without the terminator.
    fn parse_simple_stmt(&mut self, terminators: &[&str]) -> PResult<Stmt> {
        if self.looks_like_decl() {
            return self.parse_decl(terminators);
        }
        if matches!(self.peek(), "++" | "--") {
            let op = self.bump();
            let target = self.parse_postfix()?;
            return Ok(increment(target, &op));
        }
        let lhs = self.parse_postfix()?;
        let op = self.peek().to_string();
        match op.as_str() {
            "=" | "<=" => {
                self.pos += 1;
                if self.eat("#") {
                    self.pos += 1;
                }
                let rhs = self.parse_expr()?;
                Ok(Stmt::Assign {
                    lhs,
                    rhs,
                    nonblocking: op == "<=",
                })
            }
            "+=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>=" | "<<<=" | ">>>=" => {
                self.pos += 1;
                let rhs = self.parse_expr()?;
                let bin = op.trim_end_matches('=').to_string();
                Ok(Stmt::Assign {
                    lhs: lhs.clone(),
                    rhs: Expr::Binary {
                        op: bin,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                    },
                    nonblocking: false,
                })
            }
            "++" | "--" => {
                self.pos += 1;
                Ok(increment(lhs, &op))
            }
            _ => Ok(Stmt::Expr(lhs)),
        }
    }

    // ---- expressions ----

    pub fn parse_expr(&mut self) -> PResult<Expr> {
        let cond = self.parse_binary(LOWEST_BINARY)?;
        if self.eat("?") {
            let then = self.parse_expr()?;
            self.expect(":")?;
            let els = self.parse_expr()?;
            return Ok(Expr::Ternary {
                cond: Box::new(cond),
                then: Box::new(then),
                els: Box::new(els),
            });
        }
        Ok(cond)
    }

    fn parse_binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = self.peek().to_string();
            let Some(prec) = binary_prec(&op) else { break };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            if op == "inside" || op == "dist" {
                let set = self.parse_primary()?;
                lhs = Expr::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(set),
                };
                continue;
            }
            // `**` is right-associative
            let next = if op == "**" { prec } else { prec + 1 };
            let rhs = self.parse_binary(next)?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> PResult<Expr> {
        let t = self.peek();
        if self.kind_at(0) == Some(TokKind::Op)
            && matches!(
                t,
                "+" | "-" | "!" | "~" | "&" | "~&" | "|" | "~|" | "^" | "~^" | "^~" | "++" | "--"
            )
        {
            let op = self.bump();
            let arg = self.parse_unary()?;
            return Ok(Expr::Unary { op, arg: Box::new(arg) });
        }
        self.parse_postfix()
    }

    pub(super) fn parse_postfix(&mut self) -> PResult<Expr> {
        let mut e = self.parse_primary()?;
        loop {
            match self.peek() {
                "[" => {
                    self.pos += 1;
                    let mut indices = vec![self.parse_expr()?];
                    if self.eat(":") || self.eat("+:") || self.eat("-:") {
                        indices.push(self.parse_expr()?);
                    }
                    self.expect("]")?;
                    e = match e {
                        Expr::Index {
                            base,
                            indices: mut prev,
                        } => {
                            prev.extend(indices);
                            Expr::Index { base, indices: prev }
                        }
                        other => Expr::Index {
                            base: Box::new(other),
                            indices,
                        },
                    };
                }
                "." if self.kind_at(1) == Some(TokKind::Ident) => {
                    self.pos += 1;
                    let field = self.bump();
                    e = Expr::Member {
                        base: Box::new(e),
                        field,
                    };
                }
                "'" if self.peek_at(1) == "(" => {
                    // cast: T'(x)
                    self.pos += 2;
                    let arg = self.parse_expr()?;
                    self.expect(")")?;
                    e = Expr::Unary {
                        op: "'".into(),
                        arg: Box::new(arg),
                    };
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn parse_call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect("(")?;
        let mut args = Vec::new();
        if self.eat(")") {
            return Ok(args);
        }
        loop {
            if self.peek() == "," {
                // empty argument
            } else if self.peek() == "." && self.kind_at(1) == Some(TokKind::Ident) {
                self.pos += 2;
                self.expect("(")?;
                args.push(self.parse_expr()?);
                self.expect(")")?;
            } else {
                args.push(self.parse_expr()?);
            }
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        Ok(args)
    }

    fn parse_primary(&mut self) -> PResult<Expr> {
        let Some(kind) = self.kind_at(0) else {
            return Err(self.err("unexpected end of input"));
        };
        let t = self.peek().to_string();
        match kind {
            TokKind::Number => {
                self.pos += 1;
                let width = literal_width(&t);
                Ok(Expr::Literal { text: t, width })
            }
            TokKind::Str => {
                self.pos += 1;
                Ok(Expr::Str(t))
            }
            TokKind::SysName => {
                self.pos += 1;
                let args = if self.peek() == "(" {
                    self.parse_call_args()?
                } else {
                    Vec::new()
                };
                Ok(Expr::Call { name: t, args })
            }
            TokKind::Directive => {
                // macro use: treated as an opaque call
                self.pos += 1;
                let args = if self.peek() == "(" {
                    self.parse_call_args()?
                } else {
                    Vec::new()
                };
                Ok(Expr::Call { name: t, args })
            }
            TokKind::Ident | TokKind::Keyword
                if kind == TokKind::Ident || matches!(t.as_str(), "this" | "super" | "null") =>
            {
                self.pos += 1;
                let mut name = t;
                while self.peek() == "::" && self.kind_at(1) == Some(TokKind::Ident) {
                    self.pos += 1;
                    name.push_str("::");
                    name.push_str(&self.bump());
                }
                if self.peek() == "(" {
                    let args = self.parse_call_args()?;
                    return Ok(Expr::Call { name, args });
                }
                Ok(Expr::Ident(name))
            }
            TokKind::Keyword if DATA_TYPES.contains(&t.as_str()) && self.peek_at(1) == "'" => {
                // type cast such as signed'(x)
                self.pos += 2;
                self.expect("(")?;
                let arg = self.parse_expr()?;
                self.expect(")")?;
                Ok(Expr::Unary {
                    op: "'".into(),
                    arg: Box::new(arg),
                })
            }
            TokKind::Op => match t.as_str() {
                "(" => {
                    self.pos += 1;
                    let e = self.parse_expr()?;
                    // min:typ:max
                    if self.eat(":") {
                        self.parse_expr()?;
                        self.expect(":")?;
                        self.parse_expr()?;
                    }
                    self.expect(")")?;
                    Ok(e)
                }
                "{" | "'{" => {
                    self.pos += 1;
                    if self.eat("}") {
                        return Ok(Expr::Concat(Vec::new()));
                    }
                    let first = self.parse_pattern_item()?;
                    if self.peek() == "{" {
                        // replication {n{a, b}}
                        self.pos += 1;
                        let mut items = vec![self.parse_expr()?];
                        while self.eat(",") {
                            items.push(self.parse_expr()?);
                        }
                        self.expect("}")?;
                        self.expect("}")?;
                        return Ok(Expr::Replicate {
                            count: Box::new(first),
                            items,
                        });
                    }
                    let mut items = vec![first];
                    while self.eat(",") {
                        items.push(self.parse_pattern_item()?);
                    }
                    self.expect("}")?;
                    Ok(Expr::Concat(items))
                }
                _ => Err(self.err(format!("unexpected `{t}`"))),
            },
            _ => Err(self.err(format!("unexpected `{t}`"))),
        }
    }

    /// Concatenation element, or `key: value` / `default: value` inside an
    /// assignment pattern (the key is dropped).
    fn parse_pattern_item(&mut self) -> PResult<Expr> {
        if self.peek() == "default" && self.peek_at(1) == ":" {
            self.pos += 2;
            return self.parse_expr();
        }
        let e = self.parse_expr()?;
        if self.eat(":") {
            return self.parse_expr();
        }
        Ok(e)
    }
}

fn increment(target: Expr, op: &str) -> Stmt {
    let bin = if op == "++" { "+" } else { "-" };
    Stmt::Assign {
        lhs: target.clone(),
        rhs: Expr::Binary {
            op: bin.into(),
            lhs: Box::new(target),
            rhs: Box::new(Expr::Literal {
                text: "1".into(),
                width: None,
            }),
        },
        nonblocking: false,
    }
}

const LOWEST_BINARY: u8 = 1;

fn binary_prec(op: &str) -> Option<u8> {
    Some(match op {
        "->" | "<->" => 1,
        "||" => 2,
        "&&" => 3,
        "|" => 4,
        "^" | "~^" | "^~" => 5,
        "&" => 6,
        "==" | "!=" | "===" | "!==" | "==?" | "!=?" => 7,
        "<" | "<=" | ">" | ">=" | "inside" | "dist" => 8,
        "<<" | ">>" | "<<<" | ">>>" => 9,
        "+" | "-" => 10,
        "*" | "/" | "%" => 11,
        "**" => 12,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sv::lexer::tokenize;

    fn block(src: &str) -> BlockAst {
        let toks = tokenize(src).unwrap();
        Parser::new(src, &toks).parse_block().unwrap()
    }

    fn expr(src: &str) -> Expr {
        let toks = tokenize(src).unwrap();
        Parser::new(src, &toks).parse_expr().unwrap()
    }

    fn id(n: &str) -> Box<Expr> {
        Box::new(Expr::Ident(n.into()))
    }

    #[test]
    fn precedence() {
        assert_eq!(
            expr("a | b & c == d"),
            Expr::Binary {
                op: "|".into(),
                lhs: id("a"),
                rhs: Box::new(Expr::Binary {
                    op: "&".into(),
                    lhs: id("b"),
                    rhs: Box::new(Expr::Binary {
                        op: "==".into(),
                        lhs: id("c"),
                        rhs: id("d")
                    }),
                }),
            }
        );
        assert!(matches!(expr("s ? a : b ? c : d"), Expr::Ternary { .. }));
        assert!(matches!(expr("{4{a[3]}}"), Expr::Replicate { .. }));
        assert!(matches!(expr("cfg.en"), Expr::Member { .. }));
        assert!(matches!(expr("pkg::f(x, y)"), Expr::Call { .. }));
    }

    #[test]
    fn const_eval() {
        let mut params = BTreeMap::new();
        params.insert("W".to_string(), 8);
        assert_eq!(expr("W-1").eval(&params), Some(7));
        assert_eq!(expr("$clog2(W)").eval(&params), Some(3));
        assert_eq!(expr("2**W").eval(&params), Some(256));
    }

    #[test]
    fn always_headers() {
        let b = block("always_ff @(posedge clk or negedge rst_n) if (!rst_n) q <= '0; else q <= d;");
        assert_eq!(b.kind, BlockKind::AlwaysFf);
        assert_eq!(b.events.len(), 2);
        assert!(b.edge_triggered());
        let b = block("always @* y = a;");
        assert_eq!(b.kind, BlockKind::AlwaysGeneric);
        assert!(b.events.is_empty());
        let b = block("always @(a or b) y = a;");
        assert_eq!(b.events.len(), 2);
        assert!(!b.edge_triggered());
    }

    #[test]
    fn statements() {
        let b = block(
            "always_comb begin : blk\n  int i;\n  y = '0;\n  for (int k = 0; k < 4; k++) y[k] = a[k] ^ b;\n  unique case (s) 2'b00, 2'b01: y = 1; default: ;\n  endcase\n  cnt += 1;\nend : blk",
        );
        let Stmt::Block(stmts) = b.body else { panic!() };
        assert_eq!(stmts.len(), 5);
        assert!(matches!(stmts[0], Stmt::Decl { .. }));
        assert!(matches!(stmts[2], Stmt::Loop { .. }));
        assert!(matches!(&stmts[3], Stmt::Case { items, .. } if items.len() == 2));
    }

    #[test]
    fn multi_assign_and_user_type_decl() {
        let b = block("assign a = b, c = d;");
        assert!(matches!(&b.body, Stmt::Block(v) if v.len() == 2));
        let b = block("always_comb begin state_e nxt; nxt = IDLE; end");
        let Stmt::Block(stmts) = b.body else { panic!() };
        assert!(matches!(&stmts[0], Stmt::Decl { names, .. } if names == &["nxt".to_string()]));
    }
}
