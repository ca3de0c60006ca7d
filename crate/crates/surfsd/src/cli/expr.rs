//! Tiny arithmetic expressions for inline problem definitions.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter
//! than unary minus):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := primary ('^' factor)?
//! primary:= number | 'x' | 'y' | 'z' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp'
//! ```

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected '{0}' at byte {1}")]
    Expected(char, usize),
    #[error("unknown identifier '{0}' at byte {1}")]
    UnknownIdent(String, usize),
    #[error("trailing input at byte {0}")]
    TrailingInput(usize),
    #[error("invalid number at byte {0}")]
    BadNumber(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Coordinate 0 = x, 1 = y, 2 = z.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn parse(input: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            bytes: input.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(ExprError::TrailingInput(p.pos));
        }
        Ok(e)
    }

    pub fn eval(&self, p: Vec3) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => p[*i],
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Pow(a, b) => a.eval(p).powf(b.eval(p)),
            Expr::Neg(a) => -a.eval(p),
            Expr::Sin(a) => a.eval(p).sin(),
            Expr::Cos(a) => a.eval(p).cos(),
            Expr::Exp(a) => a.eval(p).exp(),
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            return Ok(Expr::Pow(Box::new(base), Box::new(self.factor()?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(ExprError::UnexpectedEnd),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Expected(')', self.pos));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(ExprError::UnexpectedChar(c as char, self.pos)),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == b'+' || n == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .map(Expr::Num)
            .ok_or(ExprError::BadNumber(start))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match name {
            "x" => Ok(Expr::Var(0)),
            "y" => Ok(Expr::Var(1)),
            "z" => Ok(Expr::Var(2)),
            "sin" | "cos" | "exp" => {
                if self.peek() != Some(b'(') {
                    return Err(ExprError::Expected('(', self.pos));
                }
                self.pos += 1;
                let arg = Box::new(self.expr()?);
                if self.peek() != Some(b')') {
                    return Err(ExprError::Expected(')', self.pos));
                }
                self.pos += 1;
                Ok(match name {
                    "sin" => Expr::Sin(arg),
                    "cos" => Expr::Cos(arg),
                    _ => Expr::Exp(arg),
                })
            }
            other => Err(ExprError::UnknownIdent(other.to_string(), start)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(s: &str, x: f64, y: f64, z: f64) -> f64 {
        Expr::parse(s).unwrap().eval(Vec3::new(x, y, z))
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval("1 + 2 * 3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(eval("(1 + 2) * 3", 0.0, 0.0, 0.0), 9.0);
        assert_eq!(eval("2 ^ 3 ^ 2", 0.0, 0.0, 0.0), 512.0); // right assoc
        assert_eq!(eval("-2 ^ 2", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(eval("6 / 3 / 2", 0.0, 0.0, 0.0), 1.0);
        assert_eq!(eval("1 - 2 - 3", 0.0, 0.0, 0.0), -4.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(eval("100*(x-0.5)*(y-0.5)*(z-0.5)", 1.0, 1.0, 1.0), 12.5);
        assert!((eval("sin(x)^2 + cos(x)^2", 0.7, 0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((eval("exp(1)", 0.0, 0.0, 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(eval("1e-3 * z", 0.0, 0.0, 2.0), 2e-3);
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            Expr::parse("1 + $"),
            Err(ExprError::UnexpectedChar('$', 4))
        );
        assert_eq!(
            Expr::parse("foo(1)"),
            Err(ExprError::UnknownIdent("foo".into(), 0))
        );
        assert_eq!(Expr::parse("(1"), Err(ExprError::Expected(')', 2)));
        assert_eq!(Expr::parse("1 2"), Err(ExprError::TrailingInput(2)));
        assert_eq!(Expr::parse(""), Err(ExprError::UnexpectedEnd));
    }
}
