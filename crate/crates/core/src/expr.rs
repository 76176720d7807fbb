//! A small polynomial expression language with symbolic differentiation.
//!
//! Accepted: numeric literals, the coordinates `x`, `y` (aliases `u`, `v`), parameters
//! `th0`..`th9`, binary `+ - *`, unary minus, parentheses and `^` with an integer
//! exponent between 0 and 4.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Coord(usize),
    Theta(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0, src };
        let e = p.sum()?;
        if p.pos != tokens.len() {
            return Err(Error::Parse(format!("unexpected '{}' in '{src}'", tokens[p.pos])));
        }
        Ok(e)
    }

    pub fn eval(&self, coords: [f64; 2], theta: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::Coord(i)) => coords[*i],
            Expr::Var(Var::Theta(k)) => theta.get(*k).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(coords, theta),
            Expr::Add(a, b) => a.eval(coords, theta) + b.eval(coords, theta),
            Expr::Sub(a, b) => a.eval(coords, theta) - b.eval(coords, theta),
            Expr::Mul(a, b) => a.eval(coords, theta) * b.eval(coords, theta),
            Expr::Pow(a, k) => a.eval(coords, theta).powi(*k as i32),
        }
    }

    pub fn derivative(&self, wrt: Var) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Var(v) => Num(if *v == wrt { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(wrt)),
            Add(a, b) => add(a.derivative(wrt), b.derivative(wrt)),
            Sub(a, b) => sub(a.derivative(wrt), b.derivative(wrt)),
            Mul(a, b) => add(mul(a.derivative(wrt), (**b).clone()), mul((**a).clone(), b.derivative(wrt))),
            Pow(_, 0) => Num(0.0),
            Pow(a, k) => mul(mul(Num(*k as f64), pow((**a).clone(), k - 1)), a.derivative(wrt)),
        }
    }

    /// Largest parameter index used, plus one.
    pub fn theta_dim(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(Var::Coord(_)) => 0,
            Expr::Var(Var::Theta(k)) => k + 1,
            Expr::Neg(a) | Expr::Pow(a, _) => a.theta_dim(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.theta_dim().max(b.theta_dim()),
        }
    }

    /// Largest coordinate index used, plus one.
    pub fn coord_dim(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(Var::Theta(_)) => 0,
            Expr::Var(Var::Coord(i)) => i + 1,
            Expr::Neg(a) | Expr::Pow(a, _) => a.coord_dim(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.coord_dim().max(b.coord_dim()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 0.0)
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(c) => Expr::Num(-c),
        Expr::Neg(b) => *b,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => b,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => neg(b),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (a, b) if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        (Expr::Num(o), b) if o == 1.0 => b,
        (a, Expr::Num(o)) if o == 1.0 => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: u32) -> Expr {
    match k {
        0 => Expr::Num(1.0),
        1 => a,
        k => Expr::Pow(Box::new(a), k),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(Var::Coord(0)) => write!(f, "x"),
            Expr::Var(Var::Coord(_)) => write!(f, "y"),
            Expr::Var(Var::Theta(k)) => write!(f, "th{k}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Pow(a, k) => write!(f, "({a})^{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(Var),
    Op(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(c) => write!(f, "{c}"),
            Tok::Var(v) => write!(f, "{v:?}"),
            Tok::Op(c) => write!(f, "{c}"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "+-*^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| Error::Parse(format!("bad number '{s}' in '{src}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            let var = match name.as_str() {
                "x" | "u" => Var::Coord(0),
                "y" | "v" => Var::Coord(1),
                s if s.len() == 3 && s.starts_with("th") && s.as_bytes()[2].is_ascii_digit() => {
                    Var::Theta((s.as_bytes()[2] - b'0') as usize)
                }
                _ => return Err(Error::Parse(format!("unknown identifier '{name}' in '{src}'"))),
            };
            out.push(Tok::Var(var));
        } else {
            return Err(Error::Parse(format!("unexpected character '{c}' in '{src}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            if self.eat('+') {
                e = Expr::Add(Box::new(e), Box::new(self.product()?));
            } else if self.eat('-') {
                e = Expr::Sub(Box::new(e), Box::new(self.product()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        while self.eat('*') {
            e = Expr::Mul(Box::new(e), Box::new(self.unary()?));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if !self.eat('^') {
            return Ok(base);
        }
        match self.peek() {
            Some(Tok::Num(k)) if k.fract() == 0.0 && (0.0..=4.0).contains(k) => {
                let k = *k as u32;
                self.pos += 1;
                Ok(Expr::Pow(Box::new(base), k))
            }
            other => Err(Error::Parse(format!(
                "exponent must be an integer literal between 0 and 4, found {} in '{}'",
                other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into()),
                self.src
            ))),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(c)) => {
                self.pos += 1;
                Ok(Expr::Num(c))
            }
            Some(Tok::Var(v)) => {
                self.pos += 1;
                Ok(Expr::Var(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(')') {
                    return Err(Error::Parse(format!("missing ')' in '{}'", self.src)));
                }
                Ok(e)
            }
            other => Err(Error::Parse(format!(
                "expected a number, variable or '(' but found {} in '{}'",
                other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into()),
                self.src
            ))),
        }
    }
}
