// SPDX-License-Identifier: Apache-2.0

//! Module-level scanning: headers, declarations (for widths and port
//! directions), instantiations, and the block-forming items.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::ast::{BlockAst, Expr, ParseError, Parser, Stmt};
use super::defuse::def_use_of;
use super::lexer::{tokenize, TokKind};
use super::{block_id, BlockKind, RtlBlock, SourceFile, Span, SvError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclCategory {
    Parameter,
    Port,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
    Inout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decl {
    pub category: DeclCategory,
    pub direction: Option<Direction>,
    pub width: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortConn {
    Named { port: String, signals: Vec<String> },
    Positional { index: usize, signals: Vec<String> },
    Wildcard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub module_type: String,
    pub name: String,
    pub conns: Vec<PortConn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub name: String,
    pub path: String,
    /// Header port names in declaration order.
    pub ports: Vec<String>,
    pub decls: BTreeMap<String, Decl>,
    pub params: BTreeMap<String, i64>,
    pub instances: Vec<Instance>,
}

impl ModuleInfo {
    pub fn direction(&self, port: &str) -> Option<Direction> {
        self.decls.get(port).and_then(|d| d.direction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedFile {
    pub modules: Vec<ModuleInfo>,
    pub blocks: Vec<RtlBlock>,
}

pub fn parse_file(file: &SourceFile) -> Result<ParsedFile, SvError> {
    let src = file.content.as_str();
    let toks = tokenize(src)?;
    let mut s = Segmenter {
        p: Parser::new(src, &toks),
        file,
        out: ParsedFile {
            modules: Vec::new(),
            blocks: Vec::new(),
        },
    };
    while !s.p.at_end() {
        match s.p.peek() {
            "module" | "macromodule" => s.module()?,
            "package" => s.skip_until_keyword("endpackage")?,
            "interface" => s.skip_until_keyword("endinterface")?,
            "program" => s.skip_until_keyword("endprogram")?,
            "class" => s.skip_until_keyword("endclass")?,
            "primitive" => s.skip_until_keyword("endprimitive")?,
            "config" => s.skip_until_keyword("endconfig")?,
            _ => s.p.pos += 1,
        }
    }
    Ok(s.out)
}

struct Segmenter<'a> {
    p: Parser<'a>,
    file: &'a SourceFile,
    out: ParsedFile,
}

#[derive(Clone, Default)]
struct DeclCtx {
    dir: Option<Direction>,
    param: bool,
    width: Option<u32>,
    /// A type was seen earlier in the list, so bare names inherit it.
    typed: bool,
}

fn direction_of(kw: &str) -> Option<Direction> {
    match kw {
        "input" => Some(Direction::Input),
        "output" => Some(Direction::Output),
        "inout" | "ref" => Some(Direction::Inout),
        _ => None,
    }
}

fn base_width(kw: &str) -> Option<Option<u32>> {
    Some(match kw {
        "logic" | "reg" | "bit" | "wire" | "tri" | "wand" | "wor" | "uwire" | "supply0" | "supply1" | "tri0"
        | "tri1" | "var" | "signed" | "unsigned" | "genvar" => Some(1),
        "int" | "integer" => Some(32),
        "byte" => Some(8),
        "shortint" => Some(16),
        "longint" | "time" => Some(64),
        "real" | "realtime" | "shortreal" | "string" => None,
        _ => return None,
    })
}

const SKIP_REGIONS: &[(&str, &str)] = &[
    ("function", "endfunction"),
    ("task", "endtask"),
    ("covergroup", "endgroup"),
    ("property", "endproperty"),
    ("sequence", "endsequence"),
    ("clocking", "endclocking"),
    ("specify", "endspecify"),
    ("checker", "endchecker"),
    ("class", "endclass"),
    ("interface", "endinterface"),
];

const SKIP_STATEMENTS: &[&str] = &[
    "import",
    "export",
    "timeunit",
    "timeprecision",
    "defparam",
    "assert",
    "assume",
    "cover",
    "restrict",
    "bind",
    "alias",
    "let",
    "nettype",
    "modport",
];

impl<'a> Segmenter<'a> {
    fn unbalanced(&self, at: usize, what: &str) -> SvError {
        let tok = self.p.toks.get(at).or(self.p.toks.last());
        SvError::UnbalancedDelimiters {
            line: tok.map_or(1, |t| t.line),
            byte: tok.map_or(0, |t| t.start),
            what: what.to_string(),
        }
    }

    fn skip_until_keyword(&mut self, end: &str) -> Result<(), SvError> {
        let start = self.p.pos;
        while self.p.peek() != end {
            if self.p.at_end() {
                return Err(self.unbalanced(start, &format!("missing `{end}`")));
            }
            self.p.pos += 1;
        }
        self.p.pos += 1;
        self.p.skip_label();
        Ok(())
    }

    /// Skips to just past the next `;` outside any bracket, stopping early
    /// (without consuming) at `endmodule`.
    fn skip_statement(&mut self) {
        let mut depth = 0i32;
        while !self.p.at_end() {
            match self.p.peek() {
                "(" | "[" | "{" | "'{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                ";" if depth <= 0 => {
                    self.p.pos += 1;
                    return;
                }
                "endmodule" => return,
                _ => {}
            }
            self.p.pos += 1;
        }
    }

    fn module(&mut self) -> Result<(), SvError> {
        let start = self.p.pos;
        self.p.pos += 1;
        self.p.eat("automatic");
        self.p.eat("static");
        if self.p.kind_at(0) != Some(TokKind::Ident) {
            return Err(self.unbalanced(start, "module without a name"));
        }
        let mut m = ModuleInfo {
            name: self.p.bump(),
            path: self.file.path.clone(),
            ports: Vec::new(),
            decls: BTreeMap::new(),
            params: BTreeMap::new(),
            instances: Vec::new(),
        };
        while self.p.peek() == "import" {
            self.skip_statement();
        }
        if self.p.eat("#") {
            if self.p.peek() != "(" {
                return Err(self.unbalanced(self.p.pos, "expected parameter list"));
            }
            self.p.pos += 1;
            let chunks = self.split_list(")")?;
            let after = self.p.pos;
            let mut ctx = DeclCtx {
                param: true,
                ..DeclCtx::default()
            };
            for (a, b) in chunks {
                self.decl_chunk(a, b, &mut ctx, &mut m, true);
            }
            self.p.pos = after;
        }
        if self.p.peek() == "(" {
            self.p.pos += 1;
            let chunks = self.split_list(")")?;
            let after = self.p.pos;
            let mut ctx = DeclCtx::default();
            for (a, b) in chunks {
                if let Some(name) = self.decl_chunk(a, b, &mut ctx, &mut m, false) {
                    m.ports.push(name);
                }
            }
            self.p.pos = after;
        }
        if !self.p.eat(";") {
            self.skip_statement();
        }
        self.items(start, &mut m)?;
        self.out.modules.push(m);
        Ok(())
    }

    /// Splits the remainder of a bracketed list (the opener already
    /// consumed) on top-level commas, consuming the closer.
    fn split_list(&mut self, close: &str) -> Result<Vec<(usize, usize)>, SvError> {
        let open = self.p.pos;
        let mut depth = 0i32;
        let mut chunks = Vec::new();
        let mut chunk_start = self.p.pos;
        loop {
            if self.p.at_end() {
                return Err(self.unbalanced(open.saturating_sub(1), "unclosed list"));
            }
            let t = self.p.peek();
            if depth == 0 && t == close {
                if self.p.pos > chunk_start {
                    chunks.push((chunk_start, self.p.pos));
                }
                self.p.pos += 1;
                return Ok(chunks);
            }
            match t {
                "(" | "[" | "{" | "'{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 => {
                    chunks.push((chunk_start, self.p.pos));
                    chunk_start = self.p.pos + 1;
                }
                _ => {}
            }
            self.p.pos += 1;
        }
    }

    /// Width of the packed dimension starting at `[`, advancing past it.
    fn packed_dim(&mut self, params: &BTreeMap<String, i64>) -> Option<u32> {
        let open = self.p.pos;
        self.p.pos += 1;
        let res = (|| {
            let hi = self.p.parse_expr().ok()?;
            let lo = if self.p.eat(":") {
                Some(self.p.parse_expr().ok()?)
            } else {
                None
            };
            if self.p.peek() != "]" {
                return None;
            }
            let hi = hi.eval(params)?;
            let w = match lo {
                Some(lo) => (hi - lo.eval(params)?).abs() + 1,
                None => hi,
            };
            u32::try_from(w).ok().filter(|w| *w > 0)
        })();
        // always leave the cursor after the matching `]`
        self.p.pos = open;
        let _ = self.p.skip_dims_once();
        res
    }

    /// Reads one declaration chunk (`input logic [7:0] a = 0`), updating
    /// the inherited context, and records the declared name.
    fn decl_chunk(
        &mut self,
        a: usize,
        b: usize,
        ctx: &mut DeclCtx,
        m: &mut ModuleInfo,
        header_params: bool,
    ) -> Option<String> {
        self.p.pos = a;
        let mut fresh_type = false;
        let mut width: Option<u32> = Some(1);
        let mut user_type = false;
        let mut dims: Option<Option<u32>> = None;
        let mut name = None;
        while self.p.pos < b {
            let t = self.p.peek().to_string();
            if let Some(d) = direction_of(&t) {
                ctx.dir = Some(d);
                fresh_type = true;
                self.p.pos += 1;
            } else if t == "parameter" || t == "localparam" {
                ctx.param = true;
                fresh_type = true;
                self.p.pos += 1;
            } else if t == "type" {
                // type parameters carry no width
                return None;
            } else if let Some(w) = base_width(&t) {
                if !matches!(t.as_str(), "signed" | "unsigned") {
                    width = w;
                }
                fresh_type = true;
                self.p.pos += 1;
            } else if t == "[" {
                let w = self.packed_dim(&m.params);
                dims = Some(match (dims, w) {
                    (None, w) => w,
                    (Some(Some(x)), Some(y)) => x.checked_mul(y),
                    _ => None,
                });
                fresh_type = true;
            } else if self.p.kind_at(0) == Some(TokKind::Ident) {
                let next = self.p.peek_at(1);
                if self.p.pos + 1 < b
                    && (self.p.kind_at(1) == Some(TokKind::Ident) || next == "::" || next == "." || next == "[")
                    && name.is_none()
                    && self.p.user_type_prefix().is_some()
                {
                    user_type = true;
                    fresh_type = true;
                    self.p.pos += 1;
                    if self.p.eat("::") {
                        self.p.pos += 1;
                    }
                } else if next == "." && self.p.kind_at(2) == Some(TokKind::Ident) {
                    // interface port `bus_if.mp name`
                    user_type = true;
                    fresh_type = true;
                    self.p.pos += 3;
                } else {
                    name = Some(self.p.bump());
                    let _ = self.p.skip_dims();
                    break;
                }
            } else {
                self.p.pos += 1;
            }
        }
        let name = name?;
        if fresh_type {
            ctx.typed = true;
            ctx.width = if user_type && dims.is_none() {
                None
            } else {
                match dims {
                    Some(d) => d.and_then(|d| if user_type { None } else { width.map(|w| w * d) }),
                    None => width,
                }
            };
        }
        let category = if ctx.param || header_params {
            DeclCategory::Parameter
        } else if ctx.dir.is_some() || m.ports.contains(&name) {
            DeclCategory::Port
        } else {
            DeclCategory::Local
        };
        if self.p.pos < b && self.p.eat("=") {
            if let Ok(e) = self.p.parse_expr() {
                if category == DeclCategory::Parameter {
                    if let Some(v) = e.eval(&m.params) {
                        m.params.insert(name.clone(), v);
                    }
                }
            }
        }
        if !(ctx.typed || ctx.dir.is_some() || ctx.param || header_params) {
            // non-ANSI header entry: the body declaration fills it in later
            return Some(name);
        }
        let direction = ctx.dir.or_else(|| m.decls.get(&name).and_then(|d| d.direction));
        let category = if direction.is_some() && category == DeclCategory::Local {
            DeclCategory::Port
        } else {
            category
        };
        m.decls.insert(
            name.clone(),
            Decl {
                category,
                direction,
                width: if category == DeclCategory::Parameter {
                    None
                } else {
                    ctx.width
                },
            },
        );
        Some(name)
    }

    fn items(&mut self, module_start: usize, m: &mut ModuleInfo) -> Result<(), SvError> {
        let mut ordinals: BTreeMap<BlockKind, usize> = BTreeMap::new();
        let mut gen_case_depth = 0usize;
        loop {
            if self.p.at_end() {
                return Err(self.unbalanced(module_start, "missing `endmodule`"));
            }
            let t = self.p.peek().to_string();
            match t.as_str() {
                "endmodule" => {
                    self.p.pos += 1;
                    self.p.skip_label();
                    return Ok(());
                }
                "assign" | "always" | "always_ff" | "always_comb" | "always_latch" => {
                    self.block(m, &mut ordinals)?;
                }
                "initial" | "final" => {
                    self.p.pos += 1;
                    let at = self.p.pos;
                    if self.p.parse_stmt().is_err() {
                        self.p.pos = at;
                        self.fallback_extent(at)?;
                    }
                }
                "generate" | "endgenerate" | "begin" | "end" | "else" => {
                    self.p.pos += 1;
                    self.p.skip_label();
                }
                "for" | "if" => {
                    self.p.pos += 1;
                    if self.p.peek() == "(" && self.p.skip_parens().is_err() {
                        return Err(self.unbalanced(self.p.pos, "unclosed generate header"));
                    }
                }
                "case" => {
                    self.p.pos += 1;
                    if self.p.peek() == "(" && self.p.skip_parens().is_err() {
                        return Err(self.unbalanced(self.p.pos, "unclosed generate header"));
                    }
                    gen_case_depth += 1;
                }
                "endcase" => {
                    self.p.pos += 1;
                    gen_case_depth = gen_case_depth.saturating_sub(1);
                }
                "default" if gen_case_depth > 0 => {
                    self.p.pos += 1;
                    self.p.eat(":");
                }
                "parameter" | "localparam" | "input" | "output" | "inout" | "wire" | "logic" | "reg" | "bit"
                | "int" | "integer" | "byte" | "shortint" | "longint" | "genvar" | "tri" | "wand" | "wor" | "uwire"
                | "var" | "signed" | "unsigned" | "supply0" | "supply1" | "real" | "time" | "string" => {
                    self.module_decl(m)?;
                }
                "typedef" | "struct" | "enum" | "union" => self.skip_statement(),
                ";" => self.p.pos += 1,
                _ if SKIP_STATEMENTS.contains(&t.as_str()) => self.skip_statement(),
                _ if SKIP_REGIONS.iter().any(|(o, _)| *o == t) => {
                    let end = SKIP_REGIONS.iter().find(|(o, _)| *o == t).unwrap().1;
                    self.skip_until_keyword(end)?;
                }
                _ if self.p.kind_at(0) == Some(TokKind::Directive) => {
                    self.p.pos += 1;
                    if self.p.peek() == "(" && self.p.skip_parens().is_err() {
                        return Err(self.unbalanced(self.p.pos, "unclosed macro arguments"));
                    }
                    self.p.eat(";");
                }
                _ if gen_case_depth > 0 && self.case_label_ahead() => {}
                _ if self.p.kind_at(0) == Some(TokKind::Ident) => {
                    if self.p.peek_at(1) == ":" && self.p.peek_at(2) != ":" {
                        // labelled generate construct
                        self.p.pos += 2;
                    } else if self.looks_like_instance() {
                        let at = self.p.pos;
                        if let Err(e) = self.instance(m) {
                            warn!("{}: skipping instantiation ({})", self.file.path, e.msg);
                            self.p.pos = at;
                            self.skip_statement();
                        }
                    } else if self.p.user_type_prefix().is_some() {
                        self.module_decl(m)?;
                    } else {
                        self.skip_statement();
                    }
                }
                _ => self.skip_statement(),
            }
        }
    }

    /// Inside a generate `case`, consumes `label, label :` if present.
    fn case_label_ahead(&mut self) -> bool {
        let mut k = 0;
        let mut depth = 0i32;
        loop {
            match self.p.peek_at(k) {
                "" | ";" | "begin" | "endcase" => return false,
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                ":" if depth == 0 => {
                    self.p.pos += k + 1;
                    return true;
                }
                _ => {}
            }
            k += 1;
        }
    }

    fn looks_like_instance(&self) -> bool {
        if self.p.peek_at(1) == "#" {
            return true;
        }
        if self.p.kind_at(1) != Some(TokKind::Ident) {
            return false;
        }
        let mut k = 2;
        let mut depth = 0;
        while self.p.peek_at(k) == "[" || depth > 0 {
            match self.p.peek_at(k) {
                "[" => depth += 1,
                "]" => depth -= 1,
                "" => return false,
                _ => {}
            }
            k += 1;
        }
        self.p.peek_at(k) == "("
    }

    fn module_decl(&mut self, m: &mut ModuleInfo) -> Result<(), SvError> {
        let start = self.p.pos;
        let mut depth = 0i32;
        let mut end = None;
        let mut k = start;
        while k < self.p.toks.len() {
            let t = self.p.toks[k].text(self.p.src);
            match t {
                "(" | "[" | "{" | "'{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                ";" if depth <= 0 => {
                    end = Some(k);
                    break;
                }
                "endmodule" => break,
                _ => {}
            }
            k += 1;
        }
        let Some(end) = end else {
            return Err(self.unbalanced(start, "declaration without `;`"));
        };
        self.p.pos = start;
        let mut chunks = Vec::new();
        let mut depth = 0i32;
        let mut chunk_start = start;
        for k in start..end {
            match self.p.toks[k].text(self.p.src) {
                "(" | "[" | "{" | "'{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 => {
                    chunks.push((chunk_start, k));
                    chunk_start = k + 1;
                }
                _ => {}
            }
        }
        chunks.push((chunk_start, end));
        let mut ctx = DeclCtx::default();
        for (a, b) in chunks {
            self.decl_chunk(a, b, &mut ctx, m, false);
        }
        self.p.pos = end + 1;
        Ok(())
    }

    fn instance(&mut self, m: &mut ModuleInfo) -> Result<(), ParseError> {
        let module_type = self.p.bump();
        if self.p.eat("#") {
            if self.p.peek() == "(" {
                self.p.skip_parens()?;
            } else {
                self.p.pos += 1;
            }
        }
        loop {
            if self.p.kind_at(0) != Some(TokKind::Ident) {
                return Err(self.p.err("expected an instance name"));
            }
            let name = self.p.bump();
            self.p.skip_dims()?;
            self.p.expect("(")?;
            let mut conns = Vec::new();
            let mut index = 0;
            if !self.p.eat(")") {
                loop {
                    if self.p.eat(".*") {
                        conns.push(PortConn::Wildcard);
                    } else if self.p.peek() == "." {
                        self.p.pos += 1;
                        let port = self.p.bump();
                        let signals = if self.p.eat("(") {
                            let s = if self.p.peek() == ")" {
                                Vec::new()
                            } else {
                                idents_of(&self.p.parse_expr()?)
                            };
                            self.p.expect(")")?;
                            s
                        } else {
                            vec![port.clone()]
                        };
                        conns.push(PortConn::Named { port, signals });
                    } else if self.p.peek() == "," || self.p.peek() == ")" {
                        // unconnected positional port
                    } else {
                        let signals = idents_of(&self.p.parse_expr()?);
                        conns.push(PortConn::Positional { index, signals });
                    }
                    index += 1;
                    if !self.p.eat(",") {
                        break;
                    }
                }
                self.p.expect(")")?;
            }
            m.instances.push(Instance {
                module_type: module_type.clone(),
                name,
                conns,
            });
            if !self.p.eat(",") {
                break;
            }
        }
        self.p.expect(";")?;
        Ok(())
    }

    /// Statement extent when the block parser gives up: balances
    /// begin/end, case/endcase, fork/join and brackets, then stops at a
    /// top-level `;` that is not followed by `else`.
    fn fallback_extent(&mut self, start: usize) -> Result<(), SvError> {
        let mut depth = 0i32;
        let mut kw_depth = 0i32;
        while !self.p.at_end() {
            let t = self.p.peek();
            match t {
                "(" | "[" | "{" | "'{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "begin" | "case" | "casez" | "casex" | "fork" => kw_depth += 1,
                "end" | "endcase" | "join" | "join_any" | "join_none" => {
                    kw_depth -= 1;
                    if kw_depth == 0 && depth == 0 {
                        self.p.pos += 1;
                        self.p.skip_label();
                        if self.p.peek() != "else" {
                            return Ok(());
                        }
                        continue;
                    }
                }
                ";" if depth == 0 && kw_depth == 0 => {
                    self.p.pos += 1;
                    if self.p.peek() != "else" {
                        return Ok(());
                    }
                    continue;
                }
                "endmodule" => break,
                _ => {}
            }
            if kw_depth < 0 {
                break;
            }
            self.p.pos += 1;
        }
        Err(self.unbalanced(start, "unterminated procedural block"))
    }

    fn block(&mut self, m: &ModuleInfo, ordinals: &mut BTreeMap<BlockKind, usize>) -> Result<(), SvError> {
        let start = self.p.pos;
        let ast = match self.p.parse_block() {
            Ok(ast) => ast,
            Err(e) => {
                warn!(
                    "{}: block at byte {} is outside the parsed subset ({}); using a lexical fallback",
                    self.file.path, self.p.toks[start].start, e.msg
                );
                self.p.pos = start + 1;
                self.fallback_extent(start)?;
                self.fallback_ast(start, self.p.pos)
            }
        };
        let end = self.p.pos;
        let (first, last) = (&self.p.toks[start], &self.p.toks[end - 1]);
        let text = &self.p.src[first.start..last.end];
        let span = Span {
            start_line: first.line,
            end_line: first.line + text.matches('\n').count(),
            start_byte: first.start,
            end_byte: last.end,
        };
        let ordinal = ordinals.entry(ast.kind).or_insert(0);
        let du = def_use_of(&ast);
        self.out.blocks.push(RtlBlock {
            block_id: block_id(&self.file.path, &m.name, ast.kind, *ordinal),
            kind: ast.kind,
            span,
            text: text.to_string(),
            module_name: m.name.clone(),
            path: self.file.path.clone(),
            defined: du.defined,
            used: du.used,
        });
        *ordinal += 1;
        Ok(())
    }

    /// Every identifier in the block is treated as read.
    fn fallback_ast(&self, start: usize, end: usize) -> BlockAst {
        let kind = match self.p.toks[start].text(self.p.src) {
            "assign" => BlockKind::Assign,
            "always_ff" => BlockKind::AlwaysFf,
            "always_comb" => BlockKind::AlwaysComb,
            _ => BlockKind::AlwaysGeneric,
        };
        let args = self.p.toks[start..end]
            .iter()
            .filter(|t| t.kind == TokKind::Ident)
            .map(|t| Expr::Ident(t.text(self.p.src).to_string()))
            .collect();
        BlockAst {
            kind,
            events: Vec::new(),
            body: Stmt::Expr(Expr::Call { name: "?".into(), args }),
        }
    }
}

fn idents_of(e: &Expr) -> Vec<String> {
    let mut v = Vec::new();
    e.idents(&mut v);
    let mut out: Vec<String> = v.into_iter().map(str::to_string).collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> ParsedFile {
        parse_file(&SourceFile::new("ip/rtl/x.sv", src)).unwrap()
    }

    #[test]
    fn two_block_fixture() {
        let f = parse("module m(input logic clk, a, b, d, output logic y, q);\n  assign y = a & b;\n  always_ff @(posedge clk) q <= d;\nendmodule\n");
        let kinds: Vec<_> = f.blocks.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, vec![BlockKind::Assign, BlockKind::AlwaysFf]);
        assert_eq!(f.blocks[0].block_id, "ip/rtl/x.sv::m::assign::0");
        assert_eq!(f.blocks[1].text, "always_ff @(posedge clk) q <= d;");
        assert_eq!((f.blocks[1].span.start_line, f.blocks[1].span.end_line), (3, 3));
        let m = &f.modules[0];
        assert_eq!(m.ports, vec!["clk", "a", "b", "d", "y", "q"]);
        assert_eq!(m.direction("b"), Some(Direction::Input));
        assert_eq!(m.direction("q"), Some(Direction::Output));
    }

    #[test]
    fn empty_module_has_no_blocks() {
        assert!(parse("module m; endmodule").blocks.is_empty());
    }

    #[test]
    fn nested_begin_end_is_one_block() {
        let f = parse("module m;\nalways_comb begin\n  if (a) begin\n    y = 1;\n  end else begin\n    y = 0;\n  end\nend\nendmodule");
        assert_eq!(f.blocks.len(), 1);
        assert_eq!((f.blocks[0].span.start_line, f.blocks[0].span.end_line), (2, 8));
    }

    #[test]
    fn widths_params_and_instances() {
        let f = parse(
            "module top #(parameter int W = 8, localparam int D = W * 2) (input logic [W-1:0] a, output logic [D-1:0] z);\n  logic [3:0][1:0] pk;\n  my_t s;\n  wire w1, w2;\n  sub #(.N(W)) u_sub (.i(a[0] & w1), .o(w2), .*);\n  leaf u_leaf (a, , z);\nendmodule",
        );
        let m = &f.modules[0];
        assert_eq!(m.params.get("D"), Some(&16));
        assert_eq!(m.decls["a"].width, Some(8));
        assert_eq!(m.decls["z"].width, Some(16));
        assert_eq!(m.decls["pk"].width, Some(8));
        assert_eq!(m.decls["s"].width, None);
        assert_eq!(m.decls["w2"].width, Some(1));
        assert_eq!(m.decls["W"].category, DeclCategory::Parameter);
        assert_eq!(m.instances.len(), 2);
        assert_eq!(
            m.instances[0].conns,
            vec![
                PortConn::Named {
                    port: "i".into(),
                    signals: vec!["a".into(), "w1".into()]
                },
                PortConn::Named {
                    port: "o".into(),
                    signals: vec!["w2".into()]
                },
                PortConn::Wildcard,
            ]
        );
        assert_eq!(
            m.instances[1].conns,
            vec![
                PortConn::Positional {
                    index: 0,
                    signals: vec!["a".into()]
                },
                PortConn::Positional {
                    index: 2,
                    signals: vec!["z".into()]
                },
            ]
        );
    }

    #[test]
    fn non_ansi_ports() {
        let f = parse("module m(a, y);\n  input [3:0] a;\n  output y;\n  assign y = ^a;\nendmodule");
        let m = &f.modules[0];
        assert_eq!(m.ports, vec!["a", "y"]);
        assert_eq!(m.decls["a"].width, Some(4));
        assert_eq!(m.decls["a"].category, DeclCategory::Port);
        assert_eq!(m.direction("y"), Some(Direction::Output));
    }

    #[test]
    fn generate_regions_and_skipped_items() {
        let src = "module m;\n  initial x = 0;\n  function automatic logic f(input a); return a; endfunction\n  generate\n    for (genvar i = 0; i < 4; i++) begin : g_loop\n      assign y[i] = a[i];\n    end\n    if (P) begin : g_if\n      always_comb z = 1;\n    end else begin\n      always_comb z = 0;\n    end\n    case (M)\n      0: begin assign k = 0; end\n      default: assign k = 1;\n    endcase\n  endgenerate\n  `ASSERT(chk, a |-> b, clk)\n  always @(posedge clk) r <= z;\nendmodule";
        let f = parse(src);
        let ids: Vec<_> = f
            .blocks
            .iter()
            .map(|b| b.block_id.rsplit_once("::m::").unwrap().1.to_string())
            .collect();
        assert_eq!(
            ids,
            vec![
                "assign::0",
                "always_comb::0",
                "always_comb::1",
                "assign::1",
                "assign::2",
                "always_generic::0"
            ]
        );
    }

    #[test]
    fn missing_endmodule_is_unbalanced() {
        let e = parse_file(&SourceFile::new("x.sv", "module m;\n assign a = b;\n")).unwrap_err();
        assert!(matches!(e, SvError::UnbalancedDelimiters { line: 1, .. }));
        let e = parse_file(&SourceFile::new(
            "x.sv",
            "module m;\n always_comb begin a = b;\nendmodule",
        ))
        .unwrap_err();
        assert!(matches!(e, SvError::UnbalancedDelimiters { line: 2, .. }));
    }
}
