use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Func, Inner, Node, Rational};

struct Differentiator {
    var: usize,
    memo: HashMap<*const Inner, Expr>,
}

impl Expr {
    /// Exact partial derivative with respect to coordinate `var`, simplified.
    pub fn diff(&self, var: usize) -> Expr {
        self.diff_raw(var).simplify()
    }

    /// Partial derivative without the final simplification pass.
    pub fn diff_raw(&self, var: usize) -> Expr {
        Differentiator {
            var,
            memo: HashMap::new(),
        }
        .run(self)
    }
}

impl Differentiator {
    fn run(&mut self, e: &Expr) -> Expr {
        let key = Arc::as_ptr(&e.0);
        if let Some(d) = self.memo.get(&key) {
            return d.clone();
        }
        let d = self.rule(e);
        self.memo.insert(key, d.clone());
        d
    }

    fn rule(&mut self, e: &Expr) -> Expr {
        match e.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == self.var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Neg(a) => {
                let da = self.run(a);
                if da.is_zero() {
                    da
                } else {
                    Expr::neg(da)
                }
            }
            Node::Add(ts) => {
                let ds: Vec<Expr> = ts.iter().map(|t| self.run(t)).collect();
                Expr::sum(ds)
            }
            Node::Mul(fs) => {
                let mut terms = Vec::new();
                for i in 0..fs.len() {
                    let di = self.run(&fs[i]);
                    if di.is_zero() {
                        continue;
                    }
                    let mut factors = fs.clone();
                    factors[i] = di;
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Node::Div(a, b) => {
                let da = self.run(a);
                let db = self.run(b);
                // a'/b - a b' / b^2
                let first = if da.is_zero() {
                    Expr::zero()
                } else {
                    Expr::div(da, b.clone())
                };
                let second = if db.is_zero() {
                    Expr::zero()
                } else {
                    Expr::div(Expr::product([a.clone(), db]), Expr::powi(b.clone(), 2))
                };
                Expr::sub(first, second)
            }
            Node::Pow(b, r) => {
                let db = self.run(b);
                if db.is_zero() {
                    return Expr::zero();
                }
                let coef = *r.numer() as f64 / *r.denom() as f64;
                Expr::product([
                    Expr::constant(coef),
                    Expr::pow(b.clone(), *r - Rational::from_integer(1)),
                    db,
                ])
            }
            Node::Func(f, a) => {
                let da = self.run(a);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Exp => e.clone(),
                    Func::Log => Expr::powi(a.clone(), -1),
                    Func::Sin => Expr::func(Func::Cos, a.clone()),
                    Func::Cos => Expr::neg(Expr::func(Func::Sin, a.clone())),
                    Func::Tan => Expr::powi(Expr::func(Func::Cos, a.clone()), -2),
                    Func::Sqrt => Expr::product([Expr::constant(0.5), Expr::powi(e.clone(), -1)]),
                };
                Expr::product([outer, da])
            }
        }
    }
}
