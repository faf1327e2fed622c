use std::fmt;

use super::{Chart, Expr, Node, Rational};

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_POW: u8 = 3;
const PREC_ATOM: u8 = 4;

/// Printer bound to a chart (coordinate names) or to generic `v<i>` names.
pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: Option<&'a [String]>,
}

impl Expr {
    /// Prints in the parser's grammar using the chart's coordinate names.
    pub fn display<'a>(&'a self, chart: &'a Chart) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            names: Some(chart.names()),
        }
    }

    pub fn display_generic(&self) -> ExprDisplay<'_> {
        ExprDisplay {
            expr: self,
            names: None,
        }
    }

    pub fn to_source(&self, chart: &Chart) -> String {
        self.display(chart).to_string()
    }
}

fn format_const(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

fn leading_negative(e: &Expr) -> Option<Expr> {
    match e.node() {
        Node::Neg(a) => Some(a.clone()),
        Node::Const(c) if *c < 0.0 => Some(Expr::constant(-c)),
        Node::Mul(fs) => match fs.first().and_then(Expr::as_const) {
            Some(c) if c < 0.0 => {
                let mut rest: Vec<Expr> = Vec::with_capacity(fs.len());
                if c != -1.0 {
                    rest.push(Expr::constant(-c));
                }
                rest.extend(fs[1..].iter().cloned());
                Some(if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Expr::mul(rest)
                })
            }
            _ => None,
        },
        _ => None,
    }
}

impl ExprDisplay<'_> {
    fn prec(e: &Expr) -> u8 {
        match e.node() {
            Node::Const(c) if *c < 0.0 => PREC_MUL,
            Node::Const(_) | Node::Var(_) | Node::Func(..) => PREC_ATOM,
            Node::Neg(_) | Node::Mul(_) | Node::Div(..) => PREC_MUL,
            Node::Add(_) => PREC_ADD,
            Node::Pow(..) => PREC_POW,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
        if Self::prec(e) < min_prec {
            f.write_str("(")?;
            self.write(f, e)?;
            f.write_str(")")
        } else {
            self.write(f, e)
        }
    }

    fn write_exponent(f: &mut fmt::Formatter<'_>, r: &Rational) -> fmt::Result {
        if r.is_integer() && *r.numer() >= 0 {
            write!(f, "^{}", r.numer())
        } else if r.is_integer() {
            write!(f, "^({})", r.numer())
        } else {
            write!(f, "^({}/{})", r.numer(), r.denom())
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
        match e.node() {
            Node::Const(c) => f.write_str(&format_const(*c)),
            Node::Var(i) => match self.names.and_then(|n| n.get(*i)) {
                Some(name) => f.write_str(name),
                None => write!(f, "v{i}"),
            },
            Node::Neg(a) => {
                f.write_str("-")?;
                self.write_at(f, a, PREC_POW)
            }
            Node::Add(ts) => {
                for (k, t) in ts.iter().enumerate() {
                    if k == 0 {
                        self.write_at(f, t, PREC_ADD)?;
                    } else if let Some(pos) = leading_negative(t) {
                        f.write_str(" - ")?;
                        self.write_at(f, &pos, PREC_MUL)?;
                    } else {
                        f.write_str(" + ")?;
                        self.write_at(f, t, PREC_ADD)?;
                    }
                }
                Ok(())
            }
            Node::Mul(fs) => {
                let mut rest = &fs[..];
                if fs.len() > 1 && fs[0].as_const() == Some(-1.0) {
                    f.write_str("-")?;
                    rest = &fs[1..];
                    if rest.len() == 1 {
                        return self.write_at(f, &rest[0], PREC_POW);
                    }
                }
                for (k, x) in rest.iter().enumerate() {
                    if k > 0 {
                        f.write_str("*")?;
                    }
                    let min = if k == 0 { PREC_MUL } else { PREC_POW };
                    self.write_at(f, x, min)?;
                }
                Ok(())
            }
            Node::Div(a, b) => {
                self.write_at(f, a, PREC_MUL)?;
                f.write_str("/")?;
                self.write_at(f, b, PREC_POW)
            }
            Node::Pow(b, r) => {
                self.write_at(f, b, PREC_ATOM)?;
                Self::write_exponent(f, r)
            }
            Node::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(f, a)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr)
    }
}
