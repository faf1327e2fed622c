//! Recursive descent parser.
//!
//! ```text
//! expr     := term (('+'|'-') term)*
//! term     := factor (('*'|'/') factor)*
//! factor   := ('-'|'+') factor | base ('^' exponent)?
//! exponent := '-'? integer | '(' '-'? integer ('/' integer)? ')'
//! base     := number | ident | '(' expr ')' | func '(' expr ')'
//! ```

use thiserror::Error;

use super::{Chart, Expr, Func, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    chart: &'a Chart,
}

pub(super) fn parse(source: &str, chart: &Chart) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        chart,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else if self.pos >= self.src.len() {
            Err(self.error(format!("expected `{}`, found end of input", c as char)))
        } else {
            Err(self.error(format!(
                "expected `{}`, found `{}`",
                c as char, self.src[self.pos] as char
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat(b'+') {
                terms.push(self.term()?);
            } else if self.eat(b'-') {
                terms.push(Expr::neg(self.term()?));
            } else {
                break;
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::add(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        let mut factors = Vec::new();
        loop {
            if self.eat(b'*') {
                factors.push(acc);
                acc = self.factor()?;
            } else if self.eat(b'/') {
                let num = if factors.is_empty() {
                    acc
                } else {
                    factors.push(acc);
                    Expr::mul(std::mem::take(&mut factors))
                };
                acc = Expr::div(num, self.factor()?);
            } else {
                break;
            }
        }
        if factors.is_empty() {
            Ok(acc)
        } else {
            factors.push(acc);
            Ok(Expr::mul(factors))
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::neg(self.factor()?));
        }
        if self.eat(b'+') {
            return self.factor();
        }
        let base = self.base()?;
        if self.eat(b'^') {
            let r = self.exponent()?;
            return Ok(Expr::pow(base, r));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an integer exponent"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })
    }

    fn exponent(&mut self) -> Result<Rational, ParseError> {
        if self.eat(b'(') {
            let sign = if self.eat(b'-') { -1 } else { 1 };
            let num = self.integer()?;
            let den = if self.eat(b'/') {
                let at = self.pos;
                let d = self.integer()?;
                if d == 0 {
                    return Err(ParseError::Syntax {
                        offset: at,
                        message: "zero exponent denominator".into(),
                    });
                }
                d
            } else {
                1
            };
            self.expect(b')')?;
            Ok(Rational::new(sign * num, den))
        } else {
            let sign = if self.eat(b'-') { -1 } else { 1 };
            Ok(Rational::from_integer(sign * self.integer()?))
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.error(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::constant)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(f) = Func::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::func(f, arg));
        }
        match self.chart.index_of(name) {
            Some(i) => Ok(Expr::var(i)),
            None => Err(ParseError::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;

    fn chart4() -> Chart {
        Chart::standard(4)
    }

    #[test]
    fn exp_of_negated_coordinate() {
        let e = parse("exp(-x4)", &chart4()).unwrap();
        match e.node() {
            Node::Func(Func::Exp, arg) => match arg.node() {
                Node::Neg(inner) => assert_eq!(inner, &Expr::var(3)),
                other => panic!("expected negation, got {other:?}"),
            },
            other => panic!("expected exp, got {other:?}"),
        }
    }

    #[test]
    fn dangling_operator_reports_end_offset() {
        let err = parse("x1 + ", &chart4()).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 5, .. }), "{err:?}");
    }

    #[test]
    fn latex_style_is_rejected() {
        assert!(parse("e^{-x_4}", &chart4()).is_err());
        assert!(parse("exp(-x4)", &chart4()).is_ok());
    }

    #[test]
    fn unknown_identifier() {
        let err = parse("x1 + y", &chart4()).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "y".into(),
                offset: 5
            }
        );
        // functions must be applied
        assert!(parse("exp + 1", &chart4()).is_err());
    }

    #[test]
    fn precedence_and_numbers() {
        let c = chart4();
        let p = [2.0, 3.0, 5.0, 7.0];
        let ev = |s: &str| parse(s, &c).unwrap().eval(&p).unwrap();
        assert_eq!(ev("1 + 2*3"), 7.0);
        assert_eq!(ev("-x1^2"), -4.0);
        assert_eq!(ev("x1^-1"), 0.5);
        assert_eq!(ev("x2/x1/x1"), 0.75);
        assert_eq!(ev("x1*x2/x3*x4"), 2.0 * 3.0 / 5.0 * 7.0);
        assert_eq!(ev("1e-3 + .5 + 2.5E2"), 250.501);
        assert_eq!(ev("  ( x1 +x2 ) *\tx3 "), 25.0);
        assert!(parse("x1^(1/0)", &c).is_err());
        assert!(parse("x1^x2", &c).is_err());
        assert!(parse("(x1", &c).is_err());
        assert!(parse("x1 x2", &c).is_err());
    }
}
