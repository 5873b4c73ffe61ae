//! A tiny arithmetic expression language.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names resolve at parse time against a [`Vars`] table (argument slots)
//! and a constant table. `pi` and `e` are always defined. Parsed
//! expressions evaluate generically, so dual numbers differentiate them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::dual::Real;
use crate::error::{Error, Result};
use crate::func::{GenericFn, SFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    Abs,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Atan => x.atan(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    PowF(Box<Node>, f64),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match self {
            Node::Num(v) => T::cst(*v),
            Node::Var(i) => x[*i],
            Node::Neg(a) => -a.eval(x),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::PowI(a, n) => a.eval(x).powi(*n),
            Node::PowF(a, p) => a.eval(x).powf(*p),
            Node::Pow(a, b) => (b.eval(x) * a.eval(x).ln()).exp(),
            Node::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match self {
            Node::Num(v) => Some(*v),
            Node::Var(_) => None,
            _ if self.uses_vars() => None,
            _ => Some(self.eval::<f64>(&[])),
        }
    }

    fn uses_vars(&self) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(_) => true,
            Node::Neg(a) | Node::PowI(a, _) | Node::PowF(a, _) | Node::Call(_, a) => a.uses_vars(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses_vars() || b.uses_vars()
            }
        }
    }

    /// Collect the variable slots referenced.
    pub fn slots(&self, out: &mut Vec<usize>) {
        match self {
            Node::Num(_) => {}
            Node::Var(i) => {
                if !out.contains(i) {
                    out.push(*i)
                }
            }
            Node::Neg(a) | Node::PowI(a, _) | Node::PowF(a, _) | Node::Call(_, a) => a.slots(out),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.slots(out);
                b.slots(out)
            }
        }
    }
}

/// Name → argument slot table.
#[derive(Clone, Debug, Default)]
pub struct Vars {
    slots: BTreeMap<String, usize>,
    arity: usize,
}

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a fresh slot; aliases may share a slot via [`Vars::alias`].
    pub fn push(&mut self, name: &str) -> usize {
        let slot = self.arity;
        self.slots.insert(name.to_string(), slot);
        self.arity += 1;
        slot
    }

    pub fn alias(&mut self, name: &str, slot: usize) {
        self.slots.insert(name.to_string(), slot);
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.slots.get(name).copied()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Space-time coordinates `s0..sn`, with `t` aliasing `s0` and
    /// `x`, `y`, `z` aliasing `s1..s3`.
    pub fn spacetime(n: usize) -> Self {
        let mut v = Vars::new();
        for i in 0..=n {
            v.push(&format!("s{i}"));
        }
        v.alias("t", 0);
        for (i, name) in ["x", "y", "z"].iter().enumerate().take(n) {
            v.alias(name, i + 1);
        }
        v
    }
}

/// A parsed expression bound to an argument layout.
#[derive(Clone, Debug)]
pub struct Expr {
    root: Node,
    arity: usize,
    source: String,
}

impl Expr {
    pub fn parse(src: &str, vars: &Vars, consts: &BTreeMap<String, f64>) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, vars, consts, len: src.len() };
        let root = p.expr()?;
        if p.pos < p.tokens.len() {
            return Err(Error::Parse { column: p.tokens[p.pos].1, message: "unexpected trailing input".into() });
        }
        Ok(Expr { root, arity: vars.arity(), source: src.trim().to_string() })
    }

    /// Parse over space-time coordinates `s0..sn` (and `t`) with no extra constants.
    pub fn spacetime(src: &str, n: usize) -> Result<Expr> {
        Self::parse(src, &Vars::spacetime(n), &BTreeMap::new())
    }

    pub fn from_node(root: Node, arity: usize, source: impl Into<String>) -> Expr {
        Expr { root, arity, source: source.into() }
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn into_fn(self) -> SFn {
        Arc::new(self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl GenericFn for Expr {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        self.root.eval(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = bytes[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Parse { column: col, message: format!("bad number '{text}'") })?;
            out.push((Tok::Num(v), col));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(bytes[start..i].iter().collect()), col));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return Err(Error::Parse { column: col, message: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a Vars,
    consts: &'a BTreeMap<String, f64>,
    len: usize,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.1).unwrap_or(self.len + 1)
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse { column: self.column(), message: format!("expected '{op}'") })
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { Node::Add(lhs.into(), rhs.into()) } else { Node::Sub(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { Node::Mul(lhs.into(), rhs.into()) } else { Node::Div(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(self.unary()?.into()));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(match exponent.constant_value() {
                Some(p) if p.fract() == 0.0 && p.abs() <= 64.0 => Node::PowI(base.into(), p as i32),
                Some(p) => Node::PowF(base.into(), p),
                None => Node::Pow(base.into(), exponent.into()),
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let col = self.column();
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(Error::Parse { column: col, message: "unexpected end of expression".into() });
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek_op() == Some('(') {
                    let func = Func::lookup(&name)
                        .ok_or_else(|| Error::Parse { column: col, message: format!("unknown function '{name}'") })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Node::Call(func, arg.into()));
                }
                if let Some(slot) = self.vars.get(&name) {
                    return Ok(Node::Var(slot));
                }
                if let Some(v) = self.consts.get(&name) {
                    return Ok(Node::Num(*v));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(Error::Parse { column: col, message: format!("unknown name '{name}'") }),
                }
            }
            Tok::Op(c) => Err(Error::Parse { column: col, message: format!("unexpected '{c}'") }),
        }
    }
}
