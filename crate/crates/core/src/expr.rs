//! Pointwise expression grammar for problem coefficients.
//!
//! Coefficient functions (drift, diffusion, running cost, terminal cost,
//! discount rate) are supplied as closed-form expressions over
//!
//! ```text
//!     t          current time
//!     x1 .. xd   state coordinates (1-based)
//!     a1 .. am   control components (1-based)
//! ```
//!
//! built from numeric constants, `+  -  *  /  ^`, and the functions
//! `min`, `max`, `abs`, `exp`, `cos`, `sin`. `^` binds tightest and is
//! right-associative; unary minus binds looser than `^`.
//!
//! An expression is parsed once into a tree and evaluated pointwise.
//! Evaluation never fails: out-of-range arithmetic yields IEEE infinities
//! or NaN, which the model validator and simulators report with the
//! offending point attached.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character `{ch}` at byte {at}")]
    BadChar { ch: char, at: usize },
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unknown identifier `{0}` (expected t, x<k>, a<k>, or a function name)")]
    UnknownIdent(String),
    #[error("variable `{0}` uses index 0; coordinate and control indices are 1-based")]
    ZeroIndex(String),
    #[error("`{name}` expects exactly {arity} argument(s)")]
    Arity { name: String, arity: usize },
    #[error("expected {expected} at byte {at}")]
    Expected { expected: &'static str, at: usize },
    #[error("trailing input at byte {0}")]
    Trailing(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Time,
    /// Zero-based state coordinate.
    Coord(usize),
    /// Zero-based control component.
    Control(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Abs(Box<Node>),
    Exp(Box<Node>),
    Cos(Box<Node>),
    Sin(Box<Node>),
}

impl Node {
    fn eval(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Time => t,
            Node::Coord(k) => x[*k],
            Node::Control(k) => a[*k],
            Node::Add(l, r) => l.eval(t, x, a) + r.eval(t, x, a),
            Node::Sub(l, r) => l.eval(t, x, a) - r.eval(t, x, a),
            Node::Mul(l, r) => l.eval(t, x, a) * r.eval(t, x, a),
            Node::Div(l, r) => l.eval(t, x, a) / r.eval(t, x, a),
            Node::Pow(l, r) => l.eval(t, x, a).powf(r.eval(t, x, a)),
            Node::Neg(e) => -e.eval(t, x, a),
            Node::Min(l, r) => l.eval(t, x, a).min(r.eval(t, x, a)),
            Node::Max(l, r) => l.eval(t, x, a).max(r.eval(t, x, a)),
            Node::Abs(e) => e.eval(t, x, a).abs(),
            Node::Exp(e) => e.eval(t, x, a).exp(),
            Node::Cos(e) => e.eval(t, x, a).cos(),
            Node::Sin(e) => e.eval(t, x, a).sin(),
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Node)) {
        f(self);
        match self {
            Node::Add(l, r)
            | Node::Sub(l, r)
            | Node::Mul(l, r)
            | Node::Div(l, r)
            | Node::Pow(l, r)
            | Node::Min(l, r)
            | Node::Max(l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Node::Neg(e) | Node::Abs(e) | Node::Exp(e) | Node::Cos(e) | Node::Sin(e) => e.visit(f),
            _ => {}
        }
    }
}

/// A parsed coefficient expression.
///
/// Keeps its source text: `Display`, serialization, and equality all go
/// through the source, so a spec round-trips through JSON byte-for-byte.
#[derive(Debug, Clone)]
pub struct Expr {
    src: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        match p.peek() {
            None => Ok(Expr {
                src: src.to_string(),
                root,
            }),
            Some(tok) => Err(ExprError::Trailing(tok.at)),
        }
    }

    /// Evaluates at (t, x, a). Panics if the expression references a
    /// coordinate or control index beyond the supplied slices; the model
    /// constructor checks index ranges up front.
    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        self.root.eval(t, x, a)
    }

    pub fn src(&self) -> &str {
        &self.src
    }

    /// Highest 1-based state coordinate referenced; 0 when none.
    pub fn max_coord(&self) -> usize {
        let mut m = 0usize;
        self.root.visit(&mut |n| {
            if let Node::Coord(k) = n {
                m = m.max(k + 1);
            }
        });
        m
    }

    /// Highest 1-based control component referenced; 0 when none.
    pub fn max_control(&self) -> usize {
        let mut m = 0usize;
        self.root.visit(&mut |n| {
            if let Node::Control(k) = n {
                m = m.max(k + 1);
            }
        });
        m
    }

    pub fn uses_time(&self) -> bool {
        let mut found = false;
        self.root.visit(&mut |n| found |= matches!(n, Node::Time));
        found
    }

    pub fn uses_control(&self) -> bool {
        self.max_control() > 0
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    at: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' | '-' | '*' | '/' | '^' | '(' | ')' | ',' => {
                let kind = match c {
                    '+' => TokKind::Plus,
                    '-' => TokKind::Minus,
                    '*' => TokKind::Star,
                    '/' => TokKind::Slash,
                    '^' => TokKind::Caret,
                    '(' => TokKind::LParen,
                    ')' => TokKind::RParen,
                    _ => TokKind::Comma,
                };
                out.push(Token { kind, at: i });
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ExprError::BadNumber(text.to_string()))?;
                out.push(Token {
                    kind: TokKind::Num(v),
                    at: start,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(src[start..i].to_string()),
                    at: start,
                });
            }
            _ => return Err(ExprError::BadChar { ch: c, at: i }),
        }
    }
    if out.is_empty() {
        return Err(ExprError::Empty);
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at(&self) -> usize {
        self.peek().map(|t| t.at).unwrap_or(usize::MAX)
    }

    fn expect(&mut self, kind: TokKind, expected: &'static str) -> Result<(), ExprError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ExprError::Expected {
                expected,
                at: self.at(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokKind::Plus => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                TokKind::Minus => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokKind::Star => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                TokKind::Slash => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Some(t) = self.peek() {
            if t.kind == TokKind::Minus {
                self.pos += 1;
                return Ok(Node::Neg(Box::new(self.unary()?)));
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(t) = self.peek() {
            if t.kind == TokKind::Caret {
                self.pos += 1;
                // right-associative; exponent may carry a sign
                let exp = self.unary()?;
                return Ok(Node::Pow(Box::new(base), Box::new(exp)));
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let at = self.at();
        match self.bump().map(|t| t.kind) {
            Some(TokKind::Num(v)) => Ok(Node::Const(v)),
            Some(TokKind::LParen) => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            Some(TokKind::Ident(name)) => {
                let is_call = matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokKind::LParen,
                        ..
                    })
                );
                if is_call {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(t) = self.peek() {
                        if t.kind == TokKind::Comma {
                            self.pos += 1;
                            args.push(self.expr()?);
                        } else {
                            break;
                        }
                    }
                    self.expect(TokKind::RParen, "`)`")?;
                    build_call(&name, args)
                } else {
                    parse_var(&name)
                }
            }
            _ => Err(ExprError::Expected {
                expected: "a number, variable, function, or `(`",
                at,
            }),
        }
    }
}

fn build_call(name: &str, mut args: Vec<Node>) -> Result<Node, ExprError> {
    let arity_err = |arity| ExprError::Arity {
        name: name.to_string(),
        arity,
    };
    match name {
        "min" | "max" => {
            if args.len() != 2 {
                return Err(arity_err(2));
            }
            let r = Box::new(args.pop().unwrap());
            let l = Box::new(args.pop().unwrap());
            Ok(if name == "min" {
                Node::Min(l, r)
            } else {
                Node::Max(l, r)
            })
        }
        "abs" | "exp" | "cos" | "sin" => {
            if args.len() != 1 {
                return Err(arity_err(1));
            }
            let e = Box::new(args.pop().unwrap());
            Ok(match name {
                "abs" => Node::Abs(e),
                "exp" => Node::Exp(e),
                "cos" => Node::Cos(e),
                _ => Node::Sin(e),
            })
        }
        _ => Err(ExprError::UnknownIdent(name.to_string())),
    }
}

fn parse_var(name: &str) -> Result<Node, ExprError> {
    if name == "t" {
        return Ok(Node::Time);
    }
    let (head, tail) = name.split_at(1);
    if (head == "x" || head == "a") && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())
    {
        let idx: usize = tail
            .parse()
            .map_err(|_| ExprError::UnknownIdent(name.to_string()))?;
        if idx == 0 {
            return Err(ExprError::ZeroIndex(name.to_string()));
        }
        return Ok(if head == "x" {
            Node::Coord(idx - 1)
        } else {
            Node::Control(idx - 1)
        });
    }
    Err(ExprError::UnknownIdent(name.to_string()))
}
