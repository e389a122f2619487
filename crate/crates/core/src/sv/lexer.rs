// SPDX-License-Identifier: Apache-2.0

//! Tokenizer for the SystemVerilog subset the block segmenter needs.
//!
//! Comments and whitespace are dropped from the token stream but every token
//! keeps its byte range, so callers can slice the original text (span
//! fidelity) or rewrite individual tokens in place (anonymization).

use super::SvError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokKind {
    Ident,
    Keyword,
    /// `$display`, `$clog2`, ...
    SysName,
    /// `` `ifdef ``, `` `FOO `` (macro uses and conditional directives)
    Directive,
    Number,
    Str,
    Op,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
    pub line: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

// IEEE 1800-2017 Annex B reserved words.
const KEYWORDS: &[&str] = &[
    "accept_on",
    "alias",
    "always",
    "always_comb",
    "always_ff",
    "always_latch",
    "and",
    "assert",
    "assign",
    "assume",
    "automatic",
    "before",
    "begin",
    "bind",
    "bins",
    "binsof",
    "bit",
    "break",
    "buf",
    "bufif0",
    "bufif1",
    "byte",
    "case",
    "casex",
    "casez",
    "cell",
    "chandle",
    "checker",
    "class",
    "clocking",
    "cmos",
    "config",
    "const",
    "constraint",
    "context",
    "continue",
    "cover",
    "covergroup",
    "coverpoint",
    "cross",
    "deassign",
    "default",
    "defparam",
    "design",
    "disable",
    "dist",
    "do",
    "edge",
    "else",
    "end",
    "endcase",
    "endchecker",
    "endclass",
    "endclocking",
    "endconfig",
    "endfunction",
    "endgenerate",
    "endgroup",
    "endinterface",
    "endmodule",
    "endpackage",
    "endprimitive",
    "endprogram",
    "endproperty",
    "endsequence",
    "endspecify",
    "endtable",
    "endtask",
    "enum",
    "event",
    "eventually",
    "expect",
    "export",
    "extends",
    "extern",
    "final",
    "first_match",
    "for",
    "force",
    "foreach",
    "forever",
    "fork",
    "forkjoin",
    "function",
    "generate",
    "genvar",
    "global",
    "highz0",
    "highz1",
    "if",
    "iff",
    "ifnone",
    "ignore_bins",
    "illegal_bins",
    "implements",
    "implies",
    "import",
    "incdir",
    "include",
    "initial",
    "inout",
    "input",
    "inside",
    "instance",
    "int",
    "integer",
    "interconnect",
    "interface",
    "intersect",
    "join",
    "join_any",
    "join_none",
    "large",
    "let",
    "liblist",
    "library",
    "local",
    "localparam",
    "logic",
    "longint",
    "macromodule",
    "matches",
    "medium",
    "modport",
    "module",
    "nand",
    "negedge",
    "nettype",
    "new",
    "nexttime",
    "nmos",
    "nor",
    "noshowcancelled",
    "not",
    "notif0",
    "notif1",
    "null",
    "or",
    "output",
    "package",
    "packed",
    "parameter",
    "pmos",
    "posedge",
    "primitive",
    "priority",
    "program",
    "property",
    "protected",
    "pull0",
    "pull1",
    "pulldown",
    "pullup",
    "pulsestyle_ondetect",
    "pulsestyle_onevent",
    "pure",
    "rand",
    "randc",
    "randcase",
    "randsequence",
    "rcmos",
    "real",
    "realtime",
    "ref",
    "reg",
    "reject_on",
    "release",
    "repeat",
    "restrict",
    "return",
    "rnmos",
    "rpmos",
    "rtran",
    "rtranif0",
    "rtranif1",
    "s_always",
    "s_eventually",
    "s_nexttime",
    "s_until",
    "s_until_with",
    "scalared",
    "sequence",
    "shortint",
    "shortreal",
    "showcancelled",
    "signed",
    "small",
    "soft",
    "solve",
    "specify",
    "specparam",
    "static",
    "string",
    "strong",
    "strong0",
    "strong1",
    "struct",
    "super",
    "supply0",
    "supply1",
    "sync_accept_on",
    "sync_reject_on",
    "table",
    "tagged",
    "task",
    "this",
    "throughout",
    "time",
    "timeprecision",
    "timeunit",
    "tran",
    "tranif0",
    "tranif1",
    "tri",
    "tri0",
    "tri1",
    "triand",
    "trior",
    "trireg",
    "type",
    "typedef",
    "union",
    "unique",
    "unique0",
    "unsigned",
    "until",
    "until_with",
    "untyped",
    "use",
    "uwire",
    "var",
    "vectored",
    "virtual",
    "void",
    "wait",
    "wait_order",
    "wand",
    "weak",
    "weak0",
    "weak1",
    "while",
    "wildcard",
    "wire",
    "with",
    "within",
    "wor",
    "xnor",
    "xor",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok()
}

// Longest match first.
const OPERATORS: &[&str] = &[
    "<<<=", ">>>=", "===", "!==", "==?", "!=?", "<<<", ">>>", "<->", "->>", "<<=", ">>=", "==", "!=", "<=", ">=", "&&",
    "||", "**", "<<", ">>", "->", "~&", "~|", "~^", "^~", "::", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=",
    "^=", "+:", "-:", ".*", "'{", "##",
];

/// Directives whose remaining line is swallowed as trivia.
const LINE_DIRECTIVES: &[&str] = &[
    "define",
    "undef",
    "undefineall",
    "include",
    "timescale",
    "default_nettype",
    "resetall",
    "celldefine",
    "endcelldefine",
    "line",
    "pragma",
    "begin_keywords",
    "end_keywords",
    "unconnected_drive",
    "nounconnected_drive",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, SvError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let n = bytes.len();
    while i < n {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && i + 1 < n && bytes[i + 1] == b'/' {
            while i < n && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && i + 1 < n && bytes[i + 1] == b'*' {
            let (start_line, start) = (line, i);
            i += 2;
            loop {
                if i + 1 >= n {
                    return Err(SvError::UnbalancedDelimiters {
                        line: start_line,
                        byte: start,
                        what: "unterminated block comment".into(),
                    });
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok_line = line;
        let kind = if c == b'"' {
            i += 1;
            loop {
                if i >= n || bytes[i] == b'\n' {
                    return Err(SvError::UnbalancedDelimiters {
                        line: tok_line,
                        byte: start,
                        what: "unterminated string".into(),
                    });
                }
                match bytes[i] {
                    b'\\' => i += 2,
                    b'"' => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            TokKind::Str
        } else if c == b'`' {
            i += 1;
            while i < n && is_ident_char(bytes[i]) {
                i += 1;
            }
            let name = &src[start + 1..i];
            if LINE_DIRECTIVES.contains(&name) {
                // swallow the rest of the line, honouring `\` continuations
                while i < n && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' && i + 1 < n && bytes[i + 1] == b'\n' {
                        line += 1;
                        i += 2;
                        continue;
                    }
                    i += 1;
                }
                continue;
            }
            TokKind::Directive
        } else if c == b'$' {
            i += 1;
            while i < n && is_ident_char(bytes[i]) {
                i += 1;
            }
            TokKind::SysName
        } else if c == b'\\' {
            // escaped identifier runs to the next whitespace
            while i < n && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            TokKind::Ident
        } else if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while i < n && (is_ident_char(bytes[i]) || bytes[i] >= 0x80) {
                i += 1;
            }
            if is_keyword(&src[start..i]) {
                TokKind::Keyword
            } else {
                TokKind::Ident
            }
        } else if c.is_ascii_digit() {
            i = scan_number(bytes, i);
            TokKind::Number
        } else if c == b'\'' && i + 1 < n && based_digit_start(bytes, i + 1) {
            i = scan_based(bytes, i + 1);
            TokKind::Number
        } else if c == b'\''
            && i + 1 < n
            && matches!(bytes[i + 1], b'0' | b'1' | b'x' | b'X' | b'z' | b'Z')
            && !(i + 2 < n && is_ident_char(bytes[i + 2]))
        {
            i += 2;
            TokKind::Number
        } else {
            let rest = &src[i..];
            let len = OPERATORS
                .iter()
                .find(|op| rest.starts_with(**op))
                .map_or_else(|| rest.chars().next().map_or(1, char::len_utf8), |op| op.len());
            i += len;
            TokKind::Op
        };
        toks.push(Token {
            kind,
            start,
            end: i,
            line: tok_line,
        });
    }
    Ok(toks)
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

fn based_digit_start(bytes: &[u8], i: usize) -> bool {
    let mut j = i;
    if j < bytes.len() && matches!(bytes[j], b's' | b'S') {
        j += 1;
    }
    j < bytes.len() && matches!(bytes[j], b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H')
}

/// Scans the radix letter and digits after a `'`.
fn scan_based(bytes: &[u8], mut i: usize) -> usize {
    if matches!(bytes[i], b's' | b'S') {
        i += 1;
    }
    i += 1;
    while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
        i += 1;
    }
    while i < bytes.len()
        && (bytes[i].is_ascii_hexdigit() || matches!(bytes[i], b'_' | b'x' | b'X' | b'z' | b'Z' | b'?'))
    {
        i += 1;
    }
    i
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    let n = bytes.len();
    while i < n && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
        i += 1;
    }
    if i + 1 < n && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
        i += 1;
        while i < n && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
            i += 1;
        }
    }
    // size followed by a base: 8'hff, 4 'b1010
    let mut j = i;
    while j < n && bytes[j] == b' ' {
        j += 1;
    }
    if j + 1 < n && bytes[j] == b'\'' && based_digit_start(bytes, j + 1) {
        return scan_based(bytes, j + 1);
    }
    // time units
    for unit in ["fs", "ps", "ns", "us", "ms", "s"] {
        let u = unit.as_bytes();
        if bytes[i..].starts_with(u) && !(i + u.len() < n && is_ident_char(bytes[i + u.len()])) {
            return i + u.len();
        }
    }
    i
}

/// Bit width declared by a sized literal (`8'hff` → 8).
pub fn literal_width(text: &str) -> Option<u32> {
    let (size, _) = text.split_once('\'')?;
    let digits: String = size.chars().filter(|c| c.is_ascii_digit()).collect();
    digits.parse().ok().filter(|w| *w > 0)
}

/// Integer value of a literal, when it has one (no x/z digits).
pub fn literal_value(text: &str) -> Option<i64> {
    let clean: String = text.chars().filter(|c| *c != '_' && *c != ' ').collect();
    match clean.split_once('\'') {
        None => clean.parse().ok(),
        Some((_, based)) => {
            let based = based.trim_start_matches(['s', 'S']);
            let mut chars = based.chars();
            let radix = match chars.next()?.to_ascii_lowercase() {
                'b' => 2,
                'o' => 8,
                'd' => 10,
                'h' => 16,
                '0' => return Some(0),
                '1' => return Some(1),
                _ => return None,
            };
            i64::from_str_radix(chars.as_str(), radix).ok()
        }
    }
}
