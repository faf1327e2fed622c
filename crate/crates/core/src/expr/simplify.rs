//! Conservative rewriting: constant folding, 0/1 identities, flattening,
//! like-term and like-factor collection. Not a canonical form.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Func, Inner, Node, Rational};

const MAX_PASSES: usize = 12;

#[derive(Default)]
struct Simplifier {
    memo: HashMap<*const Inner, Expr>,
}

impl Expr {
    /// Rewrites to a simpler, numerically equivalent expression. Idempotent.
    pub fn simplify(&self) -> Expr {
        let mut cur = self.clone();
        for _ in 0..MAX_PASSES {
            let next = Simplifier::default().run(&cur);
            if next == cur {
                return next;
            }
            cur = next;
        }
        cur
    }
}

fn split_coefficient(t: &Expr) -> (f64, Expr) {
    if let Node::Mul(fs) = t.node() {
        if let Some(c) = fs.first().and_then(Expr::as_const) {
            let rest = &fs[1..];
            return if rest.len() == 1 {
                (c, rest[0].clone())
            } else {
                (c, Expr::mul(rest.to_vec()))
            };
        }
    }
    (1.0, t.clone())
}

fn with_coefficient(c: f64, rest: Expr) -> Expr {
    if c == 1.0 {
        return rest;
    }
    let mut fs = vec![Expr::constant(c)];
    match rest.node() {
        Node::Mul(xs) => fs.extend(xs.iter().cloned()),
        _ => fs.push(rest),
    }
    Expr::mul(fs)
}

fn split_power(f: &Expr) -> (Expr, Rational) {
    match f.node() {
        Node::Pow(b, r) => (b.clone(), *r),
        _ => (f.clone(), Rational::from_integer(1)),
    }
}

fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Simplifier {
    fn run(&mut self, e: &Expr) -> Expr {
        let key = Arc::as_ptr(&e.0);
        if let Some(done) = self.memo.get(&key) {
            return done.clone();
        }
        let out = match e.node() {
            Node::Const(_) | Node::Var(_) => e.clone(),
            Node::Neg(a) => {
                let a = self.run(a);
                mul_canon(vec![Expr::constant(-1.0), a])
            }
            Node::Add(ts) => {
                let ts = ts.iter().map(|t| self.run(t)).collect();
                add_canon(ts)
            }
            Node::Mul(fs) => {
                let fs = fs.iter().map(|f| self.run(f)).collect();
                mul_canon(fs)
            }
            Node::Div(a, b) => {
                let a = self.run(a);
                let b = self.run(b);
                mul_canon(vec![a, pow_canon(b, Rational::from_integer(-1))])
            }
            Node::Pow(b, r) => {
                let b = self.run(b);
                pow_canon(b, *r)
            }
            Node::Func(f, a) => {
                let a = self.run(a);
                func_canon(*f, a)
            }
        };
        self.memo.insert(key, out.clone());
        out
    }
}

fn add_canon(terms: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(terms.len());
    let mut stack = terms;
    stack.reverse();
    while let Some(t) = stack.pop() {
        match t.node() {
            Node::Add(inner) => stack.extend(inner.iter().rev().cloned()),
            _ => {
                // c*(a + b) is distributed so nested sums can cancel
                let (c, rest) = split_coefficient(&t);
                match rest.node() {
                    Node::Add(inner) => stack.extend(
                        inner
                            .iter()
                            .rev()
                            .map(|x| mul_canon(vec![Expr::constant(c), x.clone()])),
                    ),
                    _ => flat.push(t),
                }
            }
        }
    }
    let mut constant = 0.0;
    let mut groups: Vec<(Expr, f64)> = Vec::new();
    let mut index: HashMap<Expr, usize> = HashMap::new();
    for t in flat {
        if let Some(c) = t.as_const() {
            constant += c;
            continue;
        }
        let (c, rest) = split_coefficient(&t);
        match index.get(&rest) {
            Some(&i) => groups[i].1 += c,
            None => {
                index.insert(rest.clone(), groups.len());
                groups.push((rest, c));
            }
        }
    }
    groups.retain(|(_, c)| *c != 0.0);
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<Expr> = groups
        .into_iter()
        .map(|(rest, c)| with_coefficient(c, rest))
        .collect();
    if constant != 0.0 || out.is_empty() {
        out.push(Expr::constant(constant));
    }
    if out.len() == 1 {
        out.pop().unwrap()
    } else {
        Expr::add(out)
    }
}

fn mul_canon(factors: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        match f.node() {
            Node::Mul(inner) => flat.extend(inner.iter().cloned()),
            _ => flat.push(f),
        }
    }
    let mut coef = 1.0;
    let mut exp_args = Vec::new();
    let mut groups: Vec<(Expr, Rational)> = Vec::new();
    let mut index: HashMap<Expr, usize> = HashMap::new();
    for f in flat {
        if let Some(c) = f.as_const() {
            coef *= c;
            continue;
        }
        if let Node::Func(Func::Exp, a) = f.node() {
            exp_args.push(a.clone());
            continue;
        }
        let (b, r) = split_power(&f);
        match index.get(&b) {
            Some(&i) => groups[i].1 += r,
            None => {
                index.insert(b.clone(), groups.len());
                groups.push((b, r));
            }
        }
    }
    if coef == 0.0 {
        return Expr::zero();
    }
    let mut out = Vec::new();
    for (b, r) in groups {
        if *r.numer() == 0 {
            continue;
        }
        let p = pow_canon(b, r);
        match p.node() {
            Node::Const(c) => coef *= c,
            Node::Mul(inner) => {
                for x in inner {
                    match x.as_const() {
                        Some(c) => coef *= c,
                        None => out.push(x.clone()),
                    }
                }
            }
            Node::Func(Func::Exp, a) => exp_args.push(a.clone()),
            _ => out.push(p),
        }
    }
    if !exp_args.is_empty() {
        let e = func_canon(Func::Exp, add_canon(exp_args));
        match e.as_const() {
            Some(c) => coef *= c,
            None => out.push(e),
        }
    }
    if coef == 0.0 {
        return Expr::zero();
    }
    out.sort();
    if out.is_empty() {
        return Expr::constant(coef);
    }
    if coef == 1.0 && out.len() == 1 {
        return out.pop().unwrap();
    }
    if coef != 1.0 {
        out.insert(0, Expr::constant(coef));
    }
    Expr::mul(out)
}

fn pow_canon(b: Expr, r: Rational) -> Expr {
    if *r.numer() == 0 {
        return Expr::one();
    }
    if r == Rational::from_integer(1) {
        return b;
    }
    let int = r.is_integer();
    match b.node() {
        Node::Const(c) => {
            let c = *c;
            if int && !(c == 0.0 && *r.numer() < 0) {
                let v = c.powf(*r.numer() as f64);
                if v.is_finite() {
                    return Expr::constant(v);
                }
            } else if c > 0.0 {
                let v = c.powf(ratio_to_f64(r));
                if v.is_finite() {
                    return Expr::constant(v);
                }
            }
            Expr::pow(b, r)
        }
        Node::Pow(inner, r2) if int => pow_canon(inner.clone(), *r2 * r),
        Node::Mul(fs) if int => mul_canon(fs.iter().map(|f| pow_canon(f.clone(), r)).collect()),
        Node::Func(Func::Exp, a) => func_canon(
            Func::Exp,
            mul_canon(vec![Expr::constant(ratio_to_f64(r)), a.clone()]),
        ),
        Node::Func(Func::Sqrt, a) if int && *r.numer() % 2 == 0 => {
            pow_canon(a.clone(), Rational::from_integer(*r.numer() / 2))
        }
        _ => Expr::pow(b, r),
    }
}

fn func_canon(f: Func, a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        let v = match f {
            Func::Exp => Some(c.exp()),
            Func::Log if c > 0.0 => Some(c.ln()),
            Func::Sin => Some(c.sin()),
            Func::Cos => Some(c.cos()),
            Func::Tan => Some(c.tan()),
            Func::Sqrt if c >= 0.0 => Some(c.sqrt()),
            _ => None,
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            return Expr::constant(v);
        }
    }
    if f == Func::Log {
        if let Node::Func(Func::Exp, inner) = a.node() {
            return inner.clone();
        }
    }
    Expr::func(f, a)
}
