//! Tiny arithmetic expression grammar for field definitions in config
//! files: `+ - * / ^` (with `^` right-associative and binding tighter
//! than unary minus), parentheses, numeric literals, coordinates
//! `x1..xn`, and the functions `sin`, `cos`, `exp`, `abs`, `min`, `max`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::ScalarFn;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
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

fn lex(src: &str) -> Result<Vec<Tok>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i > start
                        && i + 1 < bytes.len()
                        && {
                            let nx = bytes[i + 1] as char;
                            nx.is_ascii_digit() || nx == '+' || nx == '-'
                        }
                    {
                        i += 2; // consume the exponent marker and its sign/digit
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| {
                    Error::Expr(format!("bad numeric literal '{text}' in '{src}'"))
                })?;
                out.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Tok::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::Expr(format!(
                    "unexpected character '{other}' in '{src}'"
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
enum Func1 {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug)]
enum Func2 {
    Min,
    Max,
}

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(k) => x[*k],
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Call1(f, e) => {
                let v = e.eval(x);
                match f {
                    Func1::Sin => v.sin(),
                    Func1::Cos => v.cos(),
                    Func1::Exp => v.exp(),
                    Func1::Abs => v.abs(),
                }
            }
            Expr::Call2(f, a, b) => {
                let u = a.eval(x);
                let v = b.eval(x);
                match f {
                    Func2::Min => u.min(v),
                    Func2::Max => u.max(v),
                }
            }
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(k) => Some(*k),
            Expr::Neg(e) => e.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Call2(_, a, b) => a.max_var().max(b.max_var()),
            Expr::Call1(_, e) => e.max_var(),
        }
    }
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            other => Err(Error::Expr(format!(
                "expected {want:?}, found {other:?} in '{}'",
                self.src
            ))),
        }
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let (op, lbp, rbp) = match self.peek() {
                Some(Tok::Plus) => (Tok::Plus, 10, 11),
                Some(Tok::Minus) => (Tok::Minus, 10, 11),
                Some(Tok::Star) => (Tok::Star, 20, 21),
                Some(Tok::Slash) => (Tok::Slash, 20, 21),
                // Right-associative power.
                Some(Tok::Caret) => (Tok::Caret, 40, 40),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.parse_expr(rbp)?;
            lhs = match op {
                Tok::Plus => Expr::Add(Box::new(lhs), Box::new(rhs)),
                Tok::Minus => Expr::Sub(Box::new(lhs), Box::new(rhs)),
                Tok::Star => Expr::Mul(Box::new(lhs), Box::new(rhs)),
                Tok::Slash => Expr::Div(Box::new(lhs), Box::new(rhs)),
                Tok::Caret => Expr::Pow(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Minus) => {
                // Unary minus binds looser than ^ so that -x^2 = -(x^2).
                let e = self.parse_expr(30)?;
                Ok(Expr::Neg(Box::new(e)))
            }
            Some(Tok::LParen) => {
                let e = self.parse_expr(0)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.parse_ident(name),
            other => Err(Error::Expr(format!(
                "expected a value, found {other:?} in '{}'",
                self.src
            ))),
        }
    }

    fn parse_ident(&mut self, name: String) -> Result<Expr> {
        if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
            if idx == 0 {
                return Err(Error::Expr(format!(
                    "coordinates are numbered from x1, found '{name}'"
                )));
            }
            return Ok(Expr::Var(idx - 1));
        }
        let one = |f: Func1, p: &mut Self| -> Result<Expr> {
            p.expect(Tok::LParen)?;
            let a = p.parse_expr(0)?;
            p.expect(Tok::RParen)?;
            Ok(Expr::Call1(f, Box::new(a)))
        };
        let two = |f: Func2, p: &mut Self| -> Result<Expr> {
            p.expect(Tok::LParen)?;
            let a = p.parse_expr(0)?;
            p.expect(Tok::Comma)?;
            let b = p.parse_expr(0)?;
            p.expect(Tok::RParen)?;
            Ok(Expr::Call2(f, Box::new(a), Box::new(b)))
        };
        match name.as_str() {
            "sin" => one(Func1::Sin, self),
            "cos" => one(Func1::Cos, self),
            "exp" => one(Func1::Exp, self),
            "abs" => one(Func1::Abs, self),
            "min" => two(Func2::Min, self),
            "max" => two(Func2::Max, self),
            _ => Err(Error::Expr(format!(
                "unknown identifier '{name}' in '{}'",
                self.src
            ))),
        }
    }
}

/// Compile an expression into a field closure over `dim`-dimensional
/// points. Coordinate indices beyond the dimension are rejected here.
pub fn compile(src: &str, dim: usize) -> Result<ScalarFn> {
    let toks = lex(src)?;
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        src,
    };
    let expr = parser.parse_expr(0)?;
    if parser.pos != toks.len() {
        return Err(Error::Expr(format!(
            "trailing input after position {} in '{src}'",
            parser.pos
        )));
    }
    if let Some(k) = expr.max_var() {
        if k >= dim {
            return Err(Error::Expr(format!(
                "expression '{src}' uses x{} but the domain has {dim} coordinate(s)",
                k + 1
            )));
        }
    }
    Ok(Arc::new(move |x: &[f64]| expr.eval(x)))
}
