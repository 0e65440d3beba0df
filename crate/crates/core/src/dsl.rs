//! Arithmetic expressions over the state `x1..xn` and time `t`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right-associative
//! atom    := number | x<i> | t | func '(' sum ')' | '(' sum ')'
//! func    := sqrt | exp | sin | cos | tanh | abs
//! ```
//!
//! So `-2^2` is `-(2^2)` and `2^3^2` is `2^(3^2)`. Evaluation never returns
//! NaN or infinity: those cases surface as [`Error::Domain`].

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based state index (`x1` is `Var(0)`).
    Var(usize),
    Time,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Parses `text` for a system of dimension `dim`.
    pub fn parse(text: &str, dim: usize) -> Result<Expr> {
        parse(text, dim)
    }

    /// One past the largest state index referenced (0 if none).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Time => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Call(_, e) => e.arity(),
            Expr::Binary(_, l, r) => l.arity().max(r.arity()),
        }
    }

    pub fn eval(&self, state: &[f64], t: f64) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *state.get(*i).ok_or_else(|| {
                Error::DimensionMismatch(format!("x{} referenced but state has {} entries", i + 1, state.len()))
            })?,
            Expr::Time => t,
            Expr::Neg(e) => -e.eval(state, t)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(state, t)?;
                let b = r.eval(state, t)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(self.domain_error());
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a < 0.0 && b.fract() != 0.0 {
                            return Err(self.domain_error());
                        }
                        if a == 0.0 && b < 0.0 {
                            return Err(self.domain_error());
                        }
                        a.powf(b)
                    }
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval(state, t)?;
                match f {
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.domain_error());
                        }
                        a.sqrt()
                    }
                    Func::Exp => a.exp(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain_error())
        }
    }

    fn domain_error(&self) -> Error {
        Error::Domain { expr: self.to_string() }
    }
}

/// Fully parenthesized rendering; reparses to a structurally identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Time => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l}{sym}{r})")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &lx.src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Syntax { offset: start, expected: vec!["number".into()] })?;
                lx.toks.push((Tok::Num(v), start));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(lx.src[start..i].to_string()), start));
            } else {
                let tok = match c {
                    '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    _ => {
                        return Err(Error::Syntax {
                            offset: i,
                            expected: vec!["operand".into(), "operator".into()],
                        })
                    }
                };
                lx.toks.push((tok, i));
                i += c.len_utf8();
            }
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

const OPERAND: &[&str] = &["number", "variable", "function", "'('", "'-'"];

fn expected(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.product()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.bump().0 {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(name, offset),
            _ => Err(Error::Syntax { offset, expected: expected(OPERAND) }),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Expr> {
        if name == "t" {
            return Ok(Expr::Time);
        }
        if let Some(func) = Func::from_name(&name) {
            if *self.peek() != Tok::LParen {
                return Err(Error::Syntax { offset: self.offset(), expected: expected(&["'('"]) });
            }
            self.bump();
            let arg = self.sum()?;
            self.expect_rparen()?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && !digits.starts_with('0') {
                let index: usize = digits
                    .parse()
                    .map_err(|_| Error::VariableIndex { index: usize::MAX, dim: self.dim, offset })?;
                if index > self.dim {
                    return Err(Error::VariableIndex { index, dim: self.dim, offset });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        Err(Error::UnknownIdentifier { name, offset })
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(Error::Syntax { offset: self.offset(), expected: expected(&["')'", "operator"]) })
        }
    }
}

/// Parses an expression; variables `x1..x{dim}` and `t` are the only identifiers.
pub fn parse(text: &str, dim: usize) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Syntax { offset: 0, expected: expected(OPERAND) });
    }
    let toks = Lexer::run(text)?;
    let mut p = Parser { toks, pos: 0, dim };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(Error::Syntax { offset: p.offset(), expected: expected(&["operator", "end of input"]) });
    }
    Ok(e)
}

/// Rectangular grid of expressions, evaluated entry-wise into a [`Matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn parse<R: AsRef<[S]>, S: AsRef<str>>(rows: &[R], dim: usize) -> Result<ExprMatrix> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, expected {cols}",
                    i + 1,
                    r.len()
                )));
            }
            for s in r {
                entries.push(parse(s.as_ref(), dim)?);
            }
        }
        Ok(ExprMatrix { rows: rows.len(), cols, entries })
    }

    /// Column of expressions (n×1).
    pub fn parse_column<S: AsRef<str>>(items: &[S], dim: usize) -> Result<ExprMatrix> {
        let entries = items.iter().map(|s| parse(s.as_ref(), dim)).collect::<Result<Vec<_>>>()?;
        Ok(ExprMatrix { rows: entries.len(), cols: 1, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eval(&self, state: &[f64], t: f64) -> Result<Matrix> {
        let data = self.entries.iter().map(|e| e.eval(state, t)).collect::<Result<Vec<_>>>()?;
        Matrix::from_row_major(self.rows, self.cols, data)
    }

    pub fn eval_vec(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        self.entries.iter().map(|e| e.eval(state, t)).collect()
    }
}
