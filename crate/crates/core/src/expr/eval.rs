use num_traits::ToPrimitive;
use thiserror::Error;

use super::{Expr, Func, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    /// Non-integer power of a negative number, or zero to a negative power.
    PowDomain,
    /// The result overflowed or became NaN.
    NonFinite,
    /// Point has fewer coordinates than the expression references.
    MissingCoordinate,
}

impl DomainKind {
    fn describe(self) -> &'static str {
        match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "log of a nonpositive number",
            DomainKind::SqrtNegative => "sqrt of a negative number",
            DomainKind::PowDomain => "power outside its domain",
            DomainKind::NonFinite => "non-finite value",
            DomainKind::MissingCoordinate => "coordinate missing from point",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}: {term:?}", kind.describe())]
pub struct EvalError {
    pub kind: DomainKind,
    /// Offending subterm.
    pub term: Expr,
}

fn fail<T>(kind: DomainKind, term: &Expr) -> Result<T, EvalError> {
    Err(EvalError {
        kind,
        term: term.clone(),
    })
}

impl Expr {
    /// Evaluates at `point`, reporting the innermost offending subterm on domain errors.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => match point.get(*i) {
                Some(v) => *v,
                None => return fail(DomainKind::MissingCoordinate, self),
            },
            Node::Neg(a) => -a.eval(point)?,
            Node::Add(ts) => {
                let mut s = 0.0;
                for t in ts {
                    s += t.eval(point)?;
                }
                s
            }
            Node::Mul(fs) => {
                let mut p = 1.0;
                for f in fs {
                    p *= f.eval(point)?;
                }
                p
            }
            Node::Div(a, b) => {
                let num = a.eval(point)?;
                let den = b.eval(point)?;
                if den == 0.0 {
                    return fail(DomainKind::DivisionByZero, self);
                }
                num / den
            }
            Node::Pow(b, r) => {
                let base = b.eval(point)?;
                if r.is_integer() {
                    let k = *r.numer();
                    if base == 0.0 && k < 0 {
                        return fail(DomainKind::DivisionByZero, self);
                    }
                    match k.to_i32() {
                        Some(k) => base.powi(k),
                        None => base.powf(k as f64),
                    }
                } else {
                    let e = *r.numer() as f64 / *r.denom() as f64;
                    if base < 0.0 || (base == 0.0 && e < 0.0) {
                        return fail(DomainKind::PowDomain, self);
                    }
                    if *r.denom() == 2 {
                        base.sqrt().powi(*r.numer() as i32)
                    } else {
                        base.powf(e)
                    }
                }
            }
            Node::Func(f, a) => {
                let x = a.eval(point)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return fail(DomainKind::LogNonPositive, self);
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Sqrt => {
                        if x < 0.0 {
                            return fail(DomainKind::SqrtNegative, self);
                        }
                        x.sqrt()
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            fail(DomainKind::NonFinite, self)
        }
    }

    /// Evaluates every expression at `point`.
    pub fn eval_all(exprs: &[Expr], point: &[f64]) -> Result<Vec<f64>, EvalError> {
        exprs.iter().map(|e| e.eval(point)).collect()
    }
}
