//! Exact arithmetic for the `calculator` tool.
//!
//! Grammar (left-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | '(' expr ')' | '-' factor
//! ```
//!
//! Evaluation is over arbitrary-precision rationals. Results whose reduced
//! denominator has only the prime factors 2 and 5 render as exact decimals;
//! anything else falls back to the nearest `f64`.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalcError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbalanced parentheses")]
    UnbalancedParentheses,
    #[error("illegal token {found:?} at position {position}")]
    IllegalToken { position: usize, found: String },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Num(BigRational),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn parse_number(text: &str) -> Option<BigRational> {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = BigInt::from(10u8).pow(frac.len() as u32);
    Some(BigRational::new(digits, scale))
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, CalcError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        let tok = match c {
            c if c.is_whitespace() => {
                chars.next();
                continue;
            }
            '0'..='9' | '.' => {
                let mut end = i;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_digit() || d == '.' {
                        end = j + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                let text = &src[i..end];
                let value = (text.matches('.').count() <= 1)
                    .then(|| parse_number(text))
                    .flatten()
                    .ok_or_else(|| CalcError::IllegalToken { position: i, found: text.to_string() })?;
                out.push((i, Tok::Num(value)));
                continue;
            }
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '(' => Tok::Open,
            ')' => Tok::Close,
            other => return Err(CalcError::IllegalToken { position: i, found: other.to_string() }),
        };
        chars.next();
        out.push((i, tok));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn illegal(&self) -> CalcError {
        match self.toks.get(self.pos) {
            None => CalcError::UnexpectedEnd,
            Some((_, Tok::Close)) if self.depth == 0 => CalcError::UnbalancedParentheses,
            Some((p, t)) => CalcError::IllegalToken { position: *p, found: tok_text(t) },
        }
    }

    fn expr(&mut self) -> Result<BigRational, CalcError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<BigRational, CalcError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc *= self.factor()?;
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    if rhs.is_zero() {
                        return Err(CalcError::DivisionByZero);
                    }
                    acc /= rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<BigRational, CalcError> {
        match self.toks.get(self.pos).map(|(_, t)| t.clone()) {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(v)
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(Tok::Open) => {
                self.pos += 1;
                self.depth += 1;
                let v = self.expr()?;
                match self.peek() {
                    Some(Tok::Close) => {
                        self.pos += 1;
                        self.depth -= 1;
                        Ok(v)
                    }
                    None => Err(CalcError::UnbalancedParentheses),
                    Some(_) => Err(self.illegal()),
                }
            }
            _ => Err(self.illegal()),
        }
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Num(v) => v.to_string(),
        Tok::Plus => "+".into(),
        Tok::Minus => "-".into(),
        Tok::Star => "*".into(),
        Tok::Slash => "/".into(),
        Tok::Open => "(".into(),
        Tok::Close => ")".into(),
    }
}

/// Evaluates `src` exactly.
pub fn evaluate(src: &str) -> Result<BigRational, CalcError> {
    let toks = lex(src)?;
    let opens = toks.iter().filter(|(_, t)| *t == Tok::Open).count();
    let closes = toks.iter().filter(|(_, t)| *t == Tok::Close).count();
    let mut p = Parser { toks, pos: 0, depth: 0 };
    let value = p.expr();
    if opens != closes {
        return Err(CalcError::UnbalancedParentheses);
    }
    let value = value?;
    if p.pos < p.toks.len() {
        return Err(p.illegal());
    }
    Ok(value)
}

/// A calculator result: the exact value plus its display form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalcValue {
    pub exact: BigRational,
}

impl CalcValue {
    /// Decimal text when the value terminates in base ten.
    pub fn exact_decimal(&self) -> Option<String> {
        let v = &self.exact;
        let mut rest = v.denom().clone();
        let (two, five) = (BigInt::from(2), BigInt::from(5));
        let (mut twos, mut fives) = (0u32, 0u32);
        while (&rest % &two).is_zero() {
            rest /= &two;
            twos += 1;
        }
        while (&rest % &five).is_zero() {
            rest /= &five;
            fives += 1;
        }
        if !rest.is_one() {
            return None;
        }
        let places = twos.max(fives);
        let scaled = (v.numer() * BigInt::from(10).pow(places) / v.denom()).abs();
        let sign = if v.is_negative() { "-" } else { "" };
        if places == 0 {
            return Some(format!("{sign}{scaled}"));
        }
        let digits = format!("{:0>width$}", scaled.to_string(), width = places as usize + 1);
        let (int, frac) = digits.split_at(digits.len() - places as usize);
        Some(format!("{sign}{int}.{frac}"))
    }
}

impl fmt::Display for CalcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact_decimal() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}", self.exact.to_f64().unwrap_or(f64::NAN)),
        }
    }
}

pub fn calculate(src: &str) -> Result<CalcValue, CalcError> {
    evaluate(src).map(|exact| CalcValue { exact })
}
