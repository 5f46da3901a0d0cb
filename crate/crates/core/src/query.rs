//! Parser for the event query subset.
//!
//! Keywords are case-insensitive and whitespace between tokens is free-form.
//! Labels are folded to lower case.
//!
//! ```text
//! query   = "MATCH" pattern "WITHIN" window "ACCURACY" topk { bound } ;
//! pattern = "OBJECT" "(" label ")"
//!         | "CONJ" "(" label "," label ")" ;
//! window  = "WINDOW" "(" int "," int ")" ;            (* RANGE, SLIDE in seconds *)
//! topk    = "TOP" "-" int ;
//! bound   = ( "EDGE_CPU_USAGE" | "EDGE_MEMORY_USAGE" ) number [ "%" ] ;
//! label   = letter { letter | digit | "_" } ;
//! ```

use std::collections::BTreeSet;

use thiserror::Error;

use crate::types::{Pattern, Query, TypeError, WindowSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unsupported pattern `{name}` at byte {offset}")]
    UnsupportedPattern { name: String, offset: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(TypeError),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("{which} bound {value} outside (0, 100]")]
    BoundOutOfRange { which: &'static str, value: f64 },
}

/// The twenty Pascal VOC object classes.
pub const PASCAL_VOC: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary(BTreeSet<String>);

impl Vocabulary {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(labels.into_iter().map(|s| s.as_ref().to_ascii_lowercase()).collect())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(PASCAL_VOC)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64, bool),
    LParen,
    RParen,
    Comma,
    Minus,
    Percent,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax { offset, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<Token>, QueryError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'-' => Tok::Minus,
            b'%' => Tok::Percent,
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut integral = true;
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(syntax(i, "expected digits after decimal point"));
                    }
                }
                let v: f64 = text[start..i].parse().map_err(|_| syntax(start, "malformed number"))?;
                out.push(Token { tok: Tok::Number(v, integral), offset: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(text[start..i].to_string()), offset: start });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        i += 1;
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        let off = self.offset();
        match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw) => Ok(()),
            _ => Err(syntax(off, format!("expected `{kw}`"))),
        }
    }

    fn punct(&mut self, want: Tok, what: &str) -> Result<(), QueryError> {
        let off = self.offset();
        match self.next() {
            Some(t) if t.tok == want => Ok(()),
            _ => Err(syntax(off, format!("expected `{what}`"))),
        }
    }

    fn label(&mut self) -> Result<String, QueryError> {
        let off = self.offset();
        match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) => Ok(s.to_ascii_lowercase()),
            _ => Err(syntax(off, "expected object label")),
        }
    }

    fn integer(&mut self) -> Result<u64, QueryError> {
        let off = self.offset();
        match self.next() {
            Some(Token { tok: Tok::Number(v, true), .. }) if v <= u32::MAX as f64 => Ok(v as u64),
            _ => Err(syntax(off, "expected integer")),
        }
    }

    fn number(&mut self) -> Result<f64, QueryError> {
        let off = self.offset();
        match self.next() {
            Some(Token { tok: Tok::Number(v, _), .. }) => Ok(v),
            _ => Err(syntax(off, "expected number")),
        }
    }

    fn pattern(&mut self) -> Result<Pattern, QueryError> {
        let off = self.offset();
        let name = match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) => s,
            _ => return Err(syntax(off, "expected pattern")),
        };
        if name.eq_ignore_ascii_case("OBJECT") {
            self.punct(Tok::LParen, "(")?;
            let l = self.label()?;
            self.punct(Tok::RParen, ")")?;
            Ok(Pattern::Object(l))
        } else if name.eq_ignore_ascii_case("CONJ") {
            self.punct(Tok::LParen, "(")?;
            let a = self.label()?;
            self.punct(Tok::Comma, ",")?;
            let b_off = self.offset();
            let b = self.label()?;
            if self.peek().is_some_and(|t| t.tok == Tok::Comma) {
                return Err(QueryError::UnsupportedPattern { name: "CONJ with more than two objects".into(), offset: off });
            }
            self.punct(Tok::RParen, ")")?;
            if a == b {
                return Err(QueryError::UnsupportedPattern { name: format!("CONJ({a}, {b})"), offset: b_off });
            }
            Ok(Pattern::Conj(a, b))
        } else {
            Err(QueryError::UnsupportedPattern { name: name.to_ascii_uppercase(), offset: off })
        }
    }
}

/// Parses query text. Never panics; every failure is a typed error.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(syntax(0, "empty query"));
    }
    let mut p = Parser { toks, pos: 0, end: text.len() };
    p.keyword("MATCH")?;
    let pattern = p.pattern()?;
    p.keyword("WITHIN")?;
    p.keyword("WINDOW")?;
    p.punct(Tok::LParen, "(")?;
    let range = p.integer()?;
    p.punct(Tok::Comma, ",")?;
    let slide = p.integer()?;
    p.punct(Tok::RParen, ")")?;
    let window = WindowSpec::from_secs(range, slide).map_err(QueryError::InvalidWindow)?;
    p.keyword("ACCURACY")?;
    p.keyword("TOP")?;
    p.punct(Tok::Minus, "-")?;
    let k_off = p.offset();
    let k = p.integer()?;
    if k == 0 {
        return Err(syntax(k_off, "TOP-k requires k >= 1"));
    }
    let mut cpu = None;
    let mut mem = None;
    while let Some(t) = p.peek().cloned() {
        let slot = match &t.tok {
            Tok::Ident(s) if s.eq_ignore_ascii_case("EDGE_CPU_USAGE") => &mut cpu,
            Tok::Ident(s) if s.eq_ignore_ascii_case("EDGE_MEMORY_USAGE") => &mut mem,
            _ => return Err(syntax(t.offset, "expected EDGE_CPU_USAGE, EDGE_MEMORY_USAGE or end of query")),
        };
        if slot.is_some() {
            return Err(syntax(t.offset, "duplicate resource bound"));
        }
        p.next();
        let v = p.number()?;
        if p.peek().is_some_and(|t| t.tok == Tok::Percent) {
            p.next();
        }
        *slot = Some(v);
    }
    let q = Query::new(pattern, k as usize, window).map_err(|e| syntax(k_off, e.to_string()))?;
    Ok(q.with_bounds(cpu, mem))
}

pub fn validate_query(q: &Query, vocab: &Vocabulary) -> Result<(), QueryError> {
    for o in q.objects() {
        if !vocab.contains(o) {
            return Err(QueryError::UnknownLabel(o.to_string()));
        }
    }
    for (which, v) in [("EDGE_CPU_USAGE", q.cpu_bound_pct), ("EDGE_MEMORY_USAGE", q.mem_bound_pct)] {
        if let Some(v) = v {
            if !(v > 0.0 && v <= 100.0) {
                return Err(QueryError::BoundOutOfRange { which, value: v });
            }
        }
    }
    Ok(())
}

/// Canonical text form; `parse_query(&render_query(q))` yields `q` again.
pub fn render_query(q: &Query) -> String {
    let pattern = match &q.pattern {
        Pattern::Object(l) => format!("OBJECT({l})"),
        Pattern::Conj(a, b) => format!("CONJ({a}, {b})"),
    };
    let mut s =
        format!("MATCH {pattern} WITHIN WINDOW({}, {}) ACCURACY TOP-{}", q.window.range_ms() / 1000, q.window.slide_ms() / 1000, q.top_k);
    if let Some(c) = q.cpu_bound_pct {
        s.push_str(&format!(" EDGE_CPU_USAGE {c:?}"));
    }
    if let Some(m) = q.mem_bound_pct {
        s.push_str(&format!(" EDGE_MEMORY_USAGE {m:?}"));
    }
    s
}
