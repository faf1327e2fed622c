//! Symbolic scalar expressions over the coordinates of a chart.
//!
//! Expressions are immutable trees with shared (`Arc`) subterms. Variables are
//! stored as coordinate indices; names live on the [`Chart`] and are only needed
//! for parsing and printing.

mod diff;
mod display;
mod eval;
mod parse;
mod simplify;

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use display::ExprDisplay;
pub use eval::{DomainKind, EvalError};
pub use parse::ParseError;

/// Rational exponent of a power node.
pub type Rational = Ratio<i64>;

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;

/// Builtin unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Expr),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Div(Expr, Expr),
    Pow(Expr, Rational),
    Func(Func, Expr),
}

#[derive(Debug)]
struct Inner {
    node: Node,
    hash: u64,
}

/// A symbolic scalar expression. Cloning is cheap.
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl Expr {
    fn from_node(node: Node) -> Expr {
        let mut h = DefaultHasher::new();
        match &node {
            Node::Const(c) => {
                0u8.hash(&mut h);
                // -0.0 and 0.0 must hash alike since they compare equal
                let bits = if *c == 0.0 { 0 } else { c.to_bits() };
                bits.hash(&mut h);
            }
            Node::Var(i) => {
                1u8.hash(&mut h);
                i.hash(&mut h);
            }
            Node::Neg(a) => {
                2u8.hash(&mut h);
                a.0.hash.hash(&mut h);
            }
            Node::Add(ts) => {
                3u8.hash(&mut h);
                for t in ts {
                    t.0.hash.hash(&mut h);
                }
            }
            Node::Mul(fs) => {
                4u8.hash(&mut h);
                for f in fs {
                    f.0.hash.hash(&mut h);
                }
            }
            Node::Div(a, b) => {
                5u8.hash(&mut h);
                a.0.hash.hash(&mut h);
                b.0.hash.hash(&mut h);
            }
            Node::Pow(b, r) => {
                6u8.hash(&mut h);
                b.0.hash.hash(&mut h);
                r.numer().hash(&mut h);
                r.denom().hash(&mut h);
            }
            Node::Func(f, a) => {
                7u8.hash(&mut h);
                f.hash(&mut h);
                a.0.hash.hash(&mut h);
            }
        }
        Expr(Arc::new(Inner {
            node,
            hash: h.finish(),
        }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn constant(c: f64) -> Expr {
        Expr::from_node(Node::Const(c))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(index: usize) -> Expr {
        Expr::from_node(Node::Var(index))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::from_node(Node::Neg(a))
    }

    pub fn add(terms: Vec<Expr>) -> Expr {
        Expr::from_node(Node::Add(terms))
    }

    pub fn mul(factors: Vec<Expr>) -> Expr {
        Expr::from_node(Node::Mul(factors))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::from_node(Node::Div(a, b))
    }

    pub fn pow(base: Expr, exponent: Rational) -> Expr {
        Expr::from_node(Node::Pow(base, exponent))
    }

    pub fn powi(base: Expr, exponent: i64) -> Expr {
        Expr::pow(base, Rational::from_integer(exponent))
    }

    pub fn func(f: Func, arg: Expr) -> Expr {
        Expr::from_node(Node::Func(f, arg))
    }

    pub fn exp(arg: Expr) -> Expr {
        Expr::func(Func::Exp, arg)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Sum that drops literal zeros without a full simplification pass.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let terms: Vec<Expr> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        match terms.len() {
            0 => Expr::zero(),
            1 => terms.into_iter().next().unwrap(),
            _ => Expr::add(terms),
        }
    }

    /// Product that short-circuits on literal zeros and drops literal ones.
    pub fn product(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut out = Vec::new();
        for f in factors {
            if f.is_zero() {
                return Expr::zero();
            }
            if !f.is_one() {
                out.push(f);
            }
        }
        match out.len() {
            0 => Expr::one(),
            1 => out.into_iter().next().unwrap(),
            _ => Expr::mul(out),
        }
    }

    pub fn scale(c: f64, e: Expr) -> Expr {
        Expr::product([Expr::constant(c), e])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if b.is_zero() {
            return a;
        }
        Expr::sum([a, Expr::neg(b)])
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self.node() {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.max_var(),
            Node::Add(xs) | Node::Mul(xs) => xs.iter().filter_map(Expr::max_var).max(),
            Node::Div(a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Number of nodes in the tree, counting shared subterms once per use.
    pub fn size(&self) -> usize {
        1 + match self.node() {
            Node::Const(_) | Node::Var(_) => 0,
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.size(),
            Node::Add(xs) | Node::Mul(xs) => xs.iter().map(Expr::size).sum(),
            Node::Div(a, b) => a.size() + b.size(),
        }
    }

    /// Replaces every variable `i` by `values[i]`.
    pub fn substitute(&self, values: &[Expr]) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => values[*i].clone(),
            Node::Neg(a) => Expr::neg(a.substitute(values)),
            Node::Add(xs) => Expr::add(xs.iter().map(|x| x.substitute(values)).collect()),
            Node::Mul(xs) => Expr::mul(xs.iter().map(|x| x.substitute(values)).collect()),
            Node::Div(a, b) => Expr::div(a.substitute(values), b.substitute(values)),
            Node::Pow(b, r) => Expr::pow(b.substitute(values), *r),
            Node::Func(f, a) => Expr::func(*f, a.substitute(values)),
        }
    }

    /// Shifts every variable index by `offset`.
    pub fn shift_vars(&self, offset: usize) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => Expr::var(i + offset),
            Node::Neg(a) => Expr::neg(a.shift_vars(offset)),
            Node::Add(xs) => Expr::add(xs.iter().map(|x| x.shift_vars(offset)).collect()),
            Node::Mul(xs) => Expr::mul(xs.iter().map(|x| x.shift_vars(offset)).collect()),
            Node::Div(a, b) => Expr::div(a.shift_vars(offset), b.shift_vars(offset)),
            Node::Pow(b, r) => Expr::pow(b.shift_vars(offset), *r),
            Node::Func(f, a) => Expr::func(*f, a.shift_vars(offset)),
        }
    }

    /// Gradient as `n` simplified partial derivatives.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|a| self.diff(a)).collect()
    }

    fn kind_rank(&self) -> u8 {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(_) => 1,
            Node::Neg(_) => 2,
            Node::Add(_) => 3,
            Node::Mul(_) => 4,
            Node::Div(..) => 5,
            Node::Pow(..) => 6,
            Node::Func(..) => 7,
        }
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash && self.0.node == other.0.node)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.hash.hash(state);
    }
}

fn cmp_slices(a: &[Expr], b: &[Expr]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            return Ordering::Equal;
        }
        match self.kind_rank().cmp(&other.kind_rank()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (self.node(), other.node()) {
            (Node::Const(a), Node::Const(b)) => a.total_cmp(b),
            (Node::Var(a), Node::Var(b)) => a.cmp(b),
            (Node::Neg(a), Node::Neg(b)) => a.cmp(b),
            (Node::Add(a), Node::Add(b)) | (Node::Mul(a), Node::Mul(b)) => cmp_slices(a, b),
            (Node::Div(a1, b1), Node::Div(a2, b2)) => a1.cmp(a2).then_with(|| b1.cmp(b2)),
            (Node::Pow(b1, r1), Node::Pow(b2, r2)) => b1.cmp(b2).then_with(|| r1.cmp(r2)),
            (Node::Func(f1, a1), Node::Func(f2, a2)) => f1.cmp(f2).then_with(|| a1.cmp(a2)),
            _ => unreachable!("kind ranks matched"),
        }
    }
}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_generic())
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("chart dimension must be at least 1")]
    Empty,
    #[error("expected {expected} box intervals, got {got}")]
    BoxArity { expected: usize, got: usize },
    #[error("duplicate coordinate name `{0}`")]
    DuplicateName(String),
    #[error("invalid coordinate name `{0}`")]
    InvalidName(String),
    #[error("box interval for `{name}` is empty or not finite: [{lo}, {hi}]")]
    EmptyInterval { name: String, lo: f64, hi: f64 },
}

/// A single coordinate chart: ordered coordinate names and a sample box.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

fn valid_ident(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && Func::from_name(name).is_none()
}

impl Chart {
    pub fn new(names: Vec<String>, bounds: Vec<(f64, f64)>) -> Result<Chart, ChartError> {
        if names.is_empty() {
            return Err(ChartError::Empty);
        }
        if bounds.len() != names.len() {
            return Err(ChartError::BoxArity {
                expected: names.len(),
                got: bounds.len(),
            });
        }
        for (i, name) in names.iter().enumerate() {
            if !valid_ident(name) {
                return Err(ChartError::InvalidName(name.clone()));
            }
            if names[..i].contains(name) {
                return Err(ChartError::DuplicateName(name.clone()));
            }
        }
        for (name, &(lo, hi)) in names.iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ChartError::EmptyInterval {
                    name: name.clone(),
                    lo,
                    hi,
                });
            }
        }
        Ok(Chart { names, bounds })
    }

    /// Chart with the default box `[-1, 1]^n`.
    pub fn with_names<S: AsRef<str>>(names: &[S]) -> Result<Chart, ChartError> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let bounds = vec![(-1.0, 1.0); names.len()];
        Chart::new(names, bounds)
    }

    /// `x1..xn` on `[-1, 1]^n`.
    pub fn standard(n: usize) -> Chart {
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        Chart::with_names(&names).expect("standard chart is valid")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn with_bounds(&self, bounds: Vec<(f64, f64)>) -> Result<Chart, ChartError> {
        Chart::new(self.names.clone(), bounds)
    }

    /// Chart with `prefix_name` fiber coordinates appended; fiber box `[-1, 1]^n`.
    pub fn bundle(&self, prefix: &str) -> Result<Chart, ChartError> {
        let mut names = self.names.clone();
        names.extend(self.names.iter().map(|n| format!("{prefix}_{n}")));
        let mut bounds = self.bounds.clone();
        bounds.extend(std::iter::repeat_n((-1.0, 1.0), self.dim()));
        Chart::new(names, bounds)
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Box scaled by `factor` about its center.
    pub fn scaled_bounds(&self, factor: f64) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let r = 0.5 * (hi - lo) * factor;
                (c - r, c + r)
            })
            .collect()
    }

    /// `count` points drawn uniformly from the box with a seeded generator.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_box(&self.bounds, count, &mut rng)
    }

    pub fn parse(&self, source: &str) -> Result<Expr, ParseError> {
        parse::parse(source, self)
    }
}

pub fn sample_box(bounds: &[(f64, f64)], count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
                .collect()
        })
        .collect()
}

/// Parses `source` against the coordinates of `chart`.
pub fn parse_expr(source: &str, chart: &Chart) -> Result<Expr, ParseError> {
    parse::parse(source, chart)
}

/// Outcome of a pointwise comparison of two expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Equivalence {
    pub equivalent: bool,
    /// Worst normalized residual `|a - b| / (1 + |a|)`.
    pub max_residual: f64,
    /// Point at which the worst residual occurred.
    pub witness: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{source} at sample point {point:?}")]
pub struct SampleError {
    pub point: Vec<f64>,
    pub source: EvalError,
}

/// Compares `a` and `b` at every point; equal iff `|a-b| <= tol (1 + |a|)` everywhere.
pub fn compare_on_points(
    a: &Expr,
    b: &Expr,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<Equivalence, SampleError> {
    let mut worst = Equivalence {
        equivalent: true,
        max_residual: 0.0,
        witness: points.first().cloned().unwrap_or_default(),
    };
    for p in points {
        let at = |e: &Expr| {
            e.eval(p).map_err(|source| SampleError {
                point: p.clone(),
                source,
            })
        };
        let va = at(a)?;
        let vb = at(b)?;
        let r = (va - vb).abs() / (1.0 + va.abs());
        if r > worst.max_residual || r.is_nan() {
            worst.max_residual = r;
            worst.witness = p.clone();
        }
    }
    worst.equivalent = worst.max_residual <= tol;
    Ok(worst)
}

/// Seeded sampling over the chart box followed by [`compare_on_points`].
pub fn equivalent_on_samples(
    a: &Expr,
    b: &Expr,
    chart: &Chart,
    tol: f64,
    count: usize,
    seed: u64,
) -> Result<Equivalence, SampleError> {
    assert!(count >= 1, "at least one sample point is required");
    compare_on_points(a, b, &chart.sample_points(count, seed), tol)
}
