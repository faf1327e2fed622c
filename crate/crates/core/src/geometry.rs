//! Coordinate differential geometry on a single chart.
//!
//! Index conventions: `X^a` for vector fields, `w_a` for one-forms, `G_ab` for
//! metrics and `Gamma^a_bc` for connections, with `nabla_{d_b} d_c = Gamma^a_bc d_a`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{Chart, EvalError, Expr, ParseError, SampleError};
use crate::linalg::{symbolic_det, symbolic_inverse, SYMBOLIC_MAX_DIM};

/// `|det G| >=` this at every sample point, else the metric is rejected.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("metric must be a nonempty square matrix")]
    NotSquare,
    #[error("metric is singular at {point:?} (det = {det:e})")]
    Singular { point: Vec<f64>, det: f64 },
    #[error("metric determinant simplifies to zero")]
    SymbolicallySingular,
    #[error("symbolic inversion is limited to dimension {SYMBOLIC_MAX_DIM}, got {0}")]
    DimensionTooLarge(usize),
    #[error("expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

fn sample_err(point: &[f64]) -> impl FnOnce(EvalError) -> SampleError + '_ {
    move |source| SampleError {
        point: point.to_vec(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    comps: Vec<Expr>,
}

impl VectorField {
    pub fn new(comps: Vec<Expr>) -> Self {
        VectorField { comps }
    }

    pub fn parse<S: AsRef<str>>(chart: &Chart, comps: &[S]) -> Result<Self, GeometryError> {
        if comps.len() != chart.dim() {
            return Err(GeometryError::Arity {
                expected: chart.dim(),
                got: comps.len(),
            });
        }
        let comps = comps
            .iter()
            .map(|s| chart.parse(s.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(VectorField { comps })
    }

    pub fn zero(n: usize) -> Self {
        VectorField {
            comps: vec![Expr::zero(); n],
        }
    }

    /// The coordinate field `d/dx^a`.
    pub fn coordinate(n: usize, a: usize) -> Self {
        let mut comps = vec![Expr::zero(); n];
        comps[a] = Expr::one();
        VectorField { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Expr] {
        &self.comps
    }

    pub fn component(&self, a: usize) -> &Expr {
        &self.comps[a]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Expr::is_zero)
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        Expr::eval_all(&self.comps, point)
    }

    pub fn simplify(&self) -> Self {
        VectorField {
            comps: self.comps.iter().map(Expr::simplify).collect(),
        }
    }

    /// `J[a][b] = d X^a / d x^b`.
    pub fn jacobian(&self) -> Vec<Vec<Expr>> {
        let n = self.dim();
        self.comps.iter().map(|c| c.gradient(n)).collect()
    }

    pub fn add(&self, other: &VectorField) -> Self {
        assert_eq!(self.dim(), other.dim(), "vector fields on different charts");
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| Expr::sum([a.clone(), b.clone()]).simplify())
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        assert_eq!(self.dim(), other.dim(), "vector fields on different charts");
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| Expr::sub(a.clone(), b.clone()).simplify())
                .collect(),
        }
    }

    /// Pointwise product `f X`.
    pub fn scaled(&self, f: &Expr) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .map(|c| Expr::product([f.clone(), c.clone()]).simplify())
                .collect(),
        }
    }

    /// `X(f) = X^a df/dx^a`.
    pub fn apply(&self, f: &Expr) -> Expr {
        lie_derivative(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneForm {
    comps: Vec<Expr>,
}

impl OneForm {
    pub fn new(comps: Vec<Expr>) -> Self {
        OneForm { comps }
    }

    /// Exterior derivative `df` on an `n`-dimensional chart.
    pub fn exact(f: &Expr, n: usize) -> Self {
        OneForm {
            comps: f.gradient(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Expr] {
        &self.comps
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        Expr::eval_all(&self.comps, point)
    }
}

#[derive(Debug, Clone)]
struct Inverse {
    entries: Vec<Vec<Expr>>,
}

/// Coordinate matrix `G_ab` of a (pseudo-)Riemannian metric.
#[derive(Debug, Clone)]
pub struct Metric {
    comps: Vec<Vec<Expr>>,
    inverse: OnceLock<Result<Inverse, GeometryError>>,
    partials: OnceLock<Vec<Expr>>,
}

impl PartialEq for Metric {
    fn eq(&self, other: &Self) -> bool {
        self.comps == other.comps
    }
}

impl Metric {
    pub fn new(comps: Vec<Vec<Expr>>) -> Result<Self, GeometryError> {
        let n = comps.len();
        if n == 0 || comps.iter().any(|r| r.len() != n) {
            return Err(GeometryError::NotSquare);
        }
        Ok(Metric {
            comps,
            inverse: OnceLock::new(),
            partials: OnceLock::new(),
        })
    }

    pub fn parse<S: AsRef<str>>(chart: &Chart, rows: &[Vec<S>]) -> Result<Self, GeometryError> {
        let comps = rows
            .iter()
            .map(|r| r.iter().map(|s| chart.parse(s.as_ref())).collect())
            .collect::<Result<Vec<Vec<Expr>>, _>>()?;
        if comps.len() != chart.dim() {
            return Err(GeometryError::Arity {
                expected: chart.dim(),
                got: comps.len(),
            });
        }
        Metric::new(comps)
    }

    pub fn euclidean(n: usize) -> Self {
        Metric::diagonal((0..n).map(|_| Expr::one()).collect())
    }

    pub fn diagonal(entries: Vec<Expr>) -> Self {
        let n = entries.len();
        let mut comps = vec![vec![Expr::zero(); n]; n];
        for (i, e) in entries.into_iter().enumerate() {
            comps[i][i] = e;
        }
        Metric::new(comps).expect("diagonal metric is square")
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn entry(&self, a: usize, b: usize) -> &Expr {
        &self.comps[a][b]
    }

    pub fn comps(&self) -> &[Vec<Expr>] {
        &self.comps
    }

    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] = self.comps[a][b].eval(point)?;
            }
        }
        Ok(m)
    }

    /// `d G / d x^c` evaluated at `point`, for every `c`.
    pub fn eval_partials(&self, point: &[f64]) -> Result<Vec<DMatrix<f64>>, EvalError> {
        let n = self.dim();
        // [c][a * n + b]
        let partials = self.partials.get_or_init(|| {
            (0..n)
                .flat_map(|c| self.comps.iter().flatten().map(move |e| e.diff(c)))
                .collect()
        });
        partials
            .chunks(n * n)
            .map(|chunk| Ok(DMatrix::from_row_slice(n, n, &Expr::eval_all(chunk, point)?)))
            .collect()
    }

    pub fn determinant(&self) -> Expr {
        symbolic_det(&self.comps)
    }

    /// Symbolic inverse `G^ab` (cofactor formula, `n <= 6`).
    pub fn inverse(&self) -> Result<&[Vec<Expr>], GeometryError> {
        let inv = self.inverse.get_or_init(|| {
            let n = self.dim();
            if n > SYMBOLIC_MAX_DIM {
                return Err(GeometryError::DimensionTooLarge(n));
            }
            symbolic_inverse(&self.comps)
                .map(|(entries, _)| Inverse { entries })
                .ok_or(GeometryError::SymbolicallySingular)
        });
        match inv {
            Ok(inv) => Ok(&inv.entries),
            Err(e) => Err(e.clone()),
        }
    }

    /// Rejects the metric if `|det G| < DEGENERACY_TOL` at some point.
    pub fn check_nondegenerate(&self, points: &[Vec<f64>]) -> Result<(), GeometryError> {
        for p in points {
            let det = self.eval(p).map_err(sample_err(p))?.determinant();
            if det.abs() < DEGENERACY_TOL {
                return Err(GeometryError::Singular {
                    point: p.clone(),
                    det,
                });
            }
        }
        Ok(())
    }

    /// Largest `|G_ab - G_ba|` over the points.
    pub fn symmetry_residual(&self, points: &[Vec<f64>]) -> Result<f64, SampleError> {
        let mut worst: f64 = 0.0;
        for p in points {
            let m = self.eval(p).map_err(sample_err(p))?;
            worst = worst.max((&m - m.transpose()).amax());
        }
        Ok(worst)
    }

    /// `G(X, Y) = G_ab X^a Y^b`.
    pub fn inner(&self, x: &VectorField, y: &VectorField) -> Expr {
        let n = self.dim();
        let mut terms = Vec::new();
        for a in 0..n {
            for b in 0..n {
                terms.push(Expr::product([
                    self.comps[a][b].clone(),
                    x.comps[a].clone(),
                    y.comps[b].clone(),
                ]));
            }
        }
        Expr::sum(terms).simplify()
    }
}

/// Affine connection given by its Christoffel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    n: usize,
    gamma: Vec<Expr>,
    torsion_free: bool,
}

impl Connection {
    /// `symbols[a*n*n + b*n + c] = Gamma^a_bc`.
    pub fn new(n: usize, symbols: Vec<Expr>) -> Result<Self, GeometryError> {
        if symbols.len() != n * n * n {
            return Err(GeometryError::Arity {
                expected: n * n * n,
                got: symbols.len(),
            });
        }
        let mut c = Connection {
            n,
            gamma: symbols,
            torsion_free: false,
        };
        c.torsion_free = c.detect_torsion_free();
        Ok(c)
    }

    pub fn flat(n: usize) -> Self {
        Connection {
            n,
            gamma: vec![Expr::zero(); n * n * n],
            torsion_free: true,
        }
    }

    /// Builds a connection from `(a, b, c, Gamma^a_bc)` entries; unlisted symbols are zero.
    pub fn from_entries(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, usize, Expr)>,
    ) -> Result<Self, GeometryError> {
        let mut gamma = vec![Expr::zero(); n * n * n];
        for (a, b, c, e) in entries {
            gamma[a * n * n + b * n + c] = e;
        }
        Connection::new(n, gamma)
    }

    fn detect_torsion_free(&self) -> bool {
        let n = self.n;
        let mut pending = Vec::new();
        for a in 0..n {
            for b in 0..n {
                for c in (b + 1)..n {
                    let d = Expr::sub(self.symbol(a, b, c).clone(), self.symbol(a, c, b).clone())
                        .simplify();
                    if !d.is_zero() {
                        pending.push((self.symbol(a, b, c), self.symbol(a, c, b)));
                    }
                }
            }
        }
        if pending.is_empty() {
            return true;
        }
        let points = Chart::standard(n).sample_points(32, crate::expr::DEFAULT_SEED);
        pending.iter().all(|(x, y)| {
            points.iter().all(|p| match (x.eval(p), y.eval(p)) {
                (Ok(u), Ok(v)) => (u - v).abs() <= 1e-12 * (1.0 + u.abs()),
                _ => false,
            })
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn symbol(&self, a: usize, b: usize, c: usize) -> &Expr {
        &self.gamma[a * self.n * self.n + b * self.n + c]
    }

    pub fn symbols(&self) -> &[Expr] {
        &self.gamma
    }

    pub fn is_torsion_free(&self) -> bool {
        self.torsion_free
    }

    /// All `Gamma^a_bc` at `point`, flattened like [`Connection::symbols`].
    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        Expr::eval_all(&self.gamma, point)
    }

    /// Adds `delta` to one symbol (used to build deliberately broken connections).
    pub fn perturbed(&self, a: usize, b: usize, c: usize, delta: Expr) -> Result<Self, GeometryError> {
        let mut gamma = self.gamma.clone();
        let i = a * self.n * self.n + b * self.n + c;
        gamma[i] = Expr::sum([gamma[i].clone(), delta]).simplify();
        Connection::new(self.n, gamma)
    }
}

/// Levi-Civita connection of `g`.
pub fn christoffel_from_metric(g: &Metric) -> Result<Connection, GeometryError> {
    let n = g.dim();
    let inv = g.inverse()?;
    let dg: Vec<Vec<Vec<Expr>>> = (0..n)
        .map(|a| (0..n).map(|b| g.comps[a][b].gradient(n)).collect())
        .collect();
    // lowered symbols Gamma_{d,bc} = 1/2 (d_c G_db + d_b G_dc - d_d G_bc)
    let mut lowered = vec![Expr::zero(); n * n * n];
    for d in 0..n {
        for b in 0..n {
            for c in b..n {
                let e = Expr::product([
                    Expr::constant(0.5),
                    Expr::sum([
                        dg[d][b][c].clone(),
                        dg[d][c][b].clone(),
                        Expr::neg(dg[b][c][d].clone()),
                    ]),
                ])
                .simplify();
                lowered[d * n * n + b * n + c] = e.clone();
                lowered[d * n * n + c * n + b] = e;
            }
        }
    }
    let mut gamma = vec![Expr::zero(); n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let e = Expr::sum((0..n).map(|d| {
                    Expr::product([inv[a][d].clone(), lowered[d * n * n + b * n + c].clone()])
                }))
                .simplify();
                gamma[a * n * n + b * n + c] = e.clone();
                gamma[a * n * n + c * n + b] = e;
            }
        }
    }
    Ok(Connection {
        n,
        gamma,
        torsion_free: true,
    })
}

/// Levi-Civita symbols from a metric value and its partial derivatives at one point.
pub fn christoffel_numeric(
    g: &DMatrix<f64>,
    dg: &[DMatrix<f64>],
) -> Option<Vec<f64>> {
    let n = g.nrows();
    let inv = g.clone().try_inverse()?;
    let mut gamma = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for d in 0..n {
                    s += inv[(a, d)] * (dg[c][(d, b)] + dg[b][(d, c)] - dg[d][(b, c)]);
                }
                gamma[a * n * n + b * n + c] = 0.5 * s;
            }
        }
    }
    Some(gamma)
}

pub fn lie_derivative(x: &VectorField, f: &Expr) -> Expr {
    let terms = x
        .comps
        .iter()
        .enumerate()
        .filter(|(_, xa)| !xa.is_zero())
        .map(|(a, xa)| Expr::product([xa.clone(), f.diff(a)]));
    Expr::sum(terms).simplify()
}

/// `[X, Y]^a = X(Y^a) - Y(X^a)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> VectorField {
    assert_eq!(x.dim(), y.dim(), "vector fields on different charts");
    VectorField {
        comps: (0..x.dim())
            .map(|a| Expr::sub(x.apply(&y.comps[a]), y.apply(&x.comps[a])).simplify())
            .collect(),
    }
}

/// `(nabla_X Y)^a = X(Y^a) + Gamma^a_bc X^b Y^c`.
pub fn covariant_derivative(conn: &Connection, x: &VectorField, y: &VectorField) -> VectorField {
    let n = conn.dim();
    assert!(x.dim() == n && y.dim() == n, "vector fields on different charts");
    let comps = (0..n)
        .map(|a| {
            let mut terms = vec![x.apply(&y.comps[a])];
            for b in 0..n {
                if x.comps[b].is_zero() {
                    continue;
                }
                for c in 0..n {
                    let g = conn.symbol(a, b, c);
                    if g.is_zero() || y.comps[c].is_zero() {
                        continue;
                    }
                    terms.push(Expr::product([
                        g.clone(),
                        x.comps[b].clone(),
                        y.comps[c].clone(),
                    ]));
                }
            }
            Expr::sum(terms).simplify()
        })
        .collect();
    VectorField { comps }
}

/// `<X : Y> = nabla_X Y + nabla_Y X`.
pub fn symmetric_product(conn: &Connection, x: &VectorField, y: &VectorField) -> VectorField {
    covariant_derivative(conn, x, y).add(&covariant_derivative(conn, y, x))
}

/// `T(X, Y) = nabla_X Y - nabla_Y X - [X, Y]`.
pub fn torsion(conn: &Connection, x: &VectorField, y: &VectorField) -> VectorField {
    covariant_derivative(conn, x, y)
        .sub(&covariant_derivative(conn, y, x))
        .sub(&lie_bracket(x, y))
}

/// Geodesic spray on the `2n` chart `(x, v)`.
pub fn geodesic_spray(conn: &Connection) -> VectorField {
    let n = conn.dim();
    let v = |a: usize| Expr::var(n + a);
    let mut comps: Vec<Expr> = (0..n).map(v).collect();
    for a in 0..n {
        let mut terms = Vec::new();
        for b in 0..n {
            for c in 0..n {
                let g = conn.symbol(a, b, c);
                if !g.is_zero() {
                    terms.push(Expr::product([Expr::constant(-1.0), g.clone(), v(b), v(c)]));
                }
            }
        }
        comps.push(Expr::sum(terms).simplify());
    }
    VectorField { comps }
}

/// `(flat X)_a = G_ab X^b`.
pub fn flat(g: &Metric, x: &VectorField) -> OneForm {
    let n = g.dim();
    OneForm {
        comps: (0..n)
            .map(|a| {
                Expr::sum((0..n).map(|b| Expr::product([g.comps[a][b].clone(), x.comps[b].clone()])))
                    .simplify()
            })
            .collect(),
    }
}

/// `(sharp w)^a = G^ab w_b`.
pub fn sharp(g: &Metric, w: &OneForm) -> Result<VectorField, GeometryError> {
    let inv = g.inverse()?;
    let n = g.dim();
    Ok(VectorField {
        comps: (0..n)
            .map(|a| {
                Expr::sum((0..n).map(|b| Expr::product([inv[a][b].clone(), w.comps[b].clone()])))
                    .simplify()
            })
            .collect(),
    })
}

pub fn gradient(g: &Metric, v: &Expr) -> Result<VectorField, GeometryError> {
    sharp(g, &OneForm::exact(v, g.dim()))
}

/// Beltrami bracket `df_a G^ab dg_b`.
pub fn beltrami(g: &Metric, f: &Expr, h: &Expr) -> Result<Expr, GeometryError> {
    let inv = g.inverse()?;
    let n = g.dim();
    let df = f.gradient(n);
    let dh = h.gradient(n);
    let mut terms = Vec::new();
    for a in 0..n {
        for b in 0..n {
            terms.push(Expr::product([df[a].clone(), inv[a][b].clone(), dh[b].clone()]));
        }
    }
    Ok(Expr::sum(terms).simplify())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Closedness {
    pub closed: bool,
    /// Largest `|d_b w_a - d_a w_b|`.
    pub residual: f64,
    pub witness: Vec<f64>,
}

pub fn is_closed(w: &OneForm, points: &[Vec<f64>], tol: f64) -> Result<Closedness, SampleError> {
    let n = w.dim();
    let jac: Vec<Vec<Expr>> = w.comps.iter().map(|c| c.gradient(n)).collect();
    let mut out = Closedness {
        closed: true,
        residual: 0.0,
        witness: points.first().cloned().unwrap_or_default(),
    };
    for p in points {
        for a in 0..n {
            for b in (a + 1)..n {
                let curl = jac[a][b].eval(p).map_err(sample_err(p))?
                    - jac[b][a].eval(p).map_err(sample_err(p))?;
                if curl.abs() > out.residual {
                    out.residual = curl.abs();
                    out.witness = p.clone();
                }
            }
        }
    }
    out.closed = out.residual <= tol;
    Ok(out)
}

/// Largest `|d_c G_ab - Gamma^d_ca G_db - Gamma^d_cb G_ad|` over the points.
pub fn metric_compatibility_residual(
    g: &Metric,
    conn: &Connection,
    points: &[Vec<f64>],
) -> Result<f64, SampleError> {
    let n = g.dim();
    let mut worst: f64 = 0.0;
    for p in points {
        let gm = g.eval(p).map_err(sample_err(p))?;
        let dg = g.eval_partials(p).map_err(sample_err(p))?;
        let gam = conn.eval(p).map_err(sample_err(p))?;
        let s = |a: usize, b: usize, c: usize| gam[a * n * n + b * n + c];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut r = dg[c][(a, b)];
                    for d in 0..n {
                        r -= s(d, c, a) * gm[(d, b)] + s(d, c, b) * gm[(a, d)];
                    }
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::compare_on_points;

    fn fields_agree(x: &VectorField, y: &VectorField, points: &[Vec<f64>], tol: f64) -> bool {
        x.comps
            .iter()
            .zip(&y.comps)
            .all(|(a, b)| compare_on_points(a, b, points, tol).unwrap().equivalent)
    }

    fn line() -> Chart {
        Chart::with_names(&["x"]).unwrap()
    }

    #[test]
    fn euclidean_christoffels_vanish() {
        let c = christoffel_from_metric(&Metric::euclidean(2)).unwrap();
        assert!(c.symbols().iter().all(Expr::is_zero));
        assert!(c.is_torsion_free());
    }

    #[test]
    fn diagonal_exponential_metric_is_symmetric_in_lower_indices() {
        let ch = Chart::standard(3);
        let g = Metric::diagonal(vec![
            Expr::one(),
            ch.parse("exp(-x3)").unwrap(),
            ch.parse("exp(x1)").unwrap(),
        ]);
        let conn = christoffel_from_metric(&g).unwrap();
        let pts = ch.sample_points(16, 2);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let r = compare_on_points(conn.symbol(a, b, c), conn.symbol(a, c, b), &pts, 0.0)
                        .unwrap();
                    assert!(r.equivalent);
                }
            }
        }
        assert!(metric_compatibility_residual(&g, &conn, &pts).unwrap() < 1e-12);
    }

    #[test]
    fn numeric_christoffels_match_symbolic() {
        let ch = Chart::standard(2);
        let g = Metric::parse(&ch, &[vec!["2 + x1^2", "x2"], vec!["x2", "exp(x1)"]]).unwrap();
        let conn = christoffel_from_metric(&g).unwrap();
        for p in ch.sample_points(8, 4) {
            let num = christoffel_numeric(&g.eval(&p).unwrap(), &g.eval_partials(&p).unwrap())
                .unwrap();
            for (s, v) in conn.eval(&p).unwrap().iter().zip(&num) {
                assert!((s - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn torsion_of_hand_built_connection() {
        // Gamma^1_12 = 1, all else 0; X = d1, Y = d2
        let conn = Connection::from_entries(2, [(0, 0, 1, Expr::one())]).unwrap();
        assert!(!conn.is_torsion_free());
        let t = torsion(&conn, &VectorField::coordinate(2, 0), &VectorField::coordinate(2, 1));
        assert_eq!(t, VectorField::coordinate(2, 0));
        let x = VectorField::parse(&Chart::standard(2), &["x2", "1"]).unwrap();
        assert!(torsion(&conn, &x, &x).is_zero());
    }

    #[test]
    fn covariant_derivative_hand_values() {
        let ch = line();
        let flat1 = Connection::flat(1);
        let dx = VectorField::coordinate(1, 0);
        let xdx = VectorField::parse(&ch, &["x"]).unwrap();
        assert_eq!(covariant_derivative(&flat1, &dx, &xdx), dx);
        assert_eq!(symmetric_product(&flat1, &xdx, &dx), dx);
        assert_eq!(lie_bracket(&xdx, &dx).comps()[0].as_const(), Some(-1.0));
        assert!(lie_bracket(&xdx, &xdx).is_zero());
        assert!(symmetric_product(&flat1, &dx, &dx).is_zero());
    }

    #[test]
    fn connection_axioms_on_samples() {
        let ch = Chart::standard(2);
        let g = Metric::parse(&ch, &[vec!["1", "0"], vec!["0", "exp(-x1)"]]).unwrap();
        let conn = christoffel_from_metric(&g).unwrap();
        let x = VectorField::parse(&ch, &["x2", "sin(x1)"]).unwrap();
        let y = VectorField::parse(&ch, &["x1*x2", "1 + x1"]).unwrap();
        let f = ch.parse("exp(x1) + x2^2").unwrap();
        let pts = ch.sample_points(20, 9);

        let lhs = covariant_derivative(&conn, &x.scaled(&f), &y);
        let rhs = covariant_derivative(&conn, &x, &y).scaled(&f);
        assert!(fields_agree(&lhs, &rhs, &pts, 1e-12));

        let lhs = covariant_derivative(&conn, &x, &y.scaled(&f));
        let rhs = covariant_derivative(&conn, &x, &y)
            .scaled(&f)
            .add(&y.scaled(&x.apply(&f)));
        assert!(fields_agree(&lhs, &rhs, &pts, 1e-12));

        assert!(fields_agree(
            &symmetric_product(&conn, &x, &y),
            &symmetric_product(&conn, &y, &x),
            &pts,
            1e-14
        ));
        // <fX : Y> = f<X : Y> + Y(f) X
        let lhs = symmetric_product(&conn, &x.scaled(&f), &y);
        let rhs = symmetric_product(&conn, &x, &y)
            .scaled(&f)
            .add(&x.scaled(&y.apply(&f)));
        assert!(fields_agree(&lhs, &rhs, &pts, 1e-12));
        assert!(torsion(&conn, &x, &y).simplify().comps().iter().all(|c| {
            compare_on_points(c, &Expr::zero(), &pts, 1e-12).unwrap().equivalent
        }));
    }

    #[test]
    fn jacobi_identity() {
        let ch = Chart::standard(2);
        let x = VectorField::parse(&ch, &["x2", "x1^2"]).unwrap();
        let y = VectorField::parse(&ch, &["sin(x1)", "1"]).unwrap();
        let z = VectorField::parse(&ch, &["exp(x2)", "x1*x2"]).unwrap();
        let j = lie_bracket(&x, &lie_bracket(&y, &z))
            .add(&lie_bracket(&y, &lie_bracket(&z, &x)))
            .add(&lie_bracket(&z, &lie_bracket(&x, &y)));
        for p in ch.sample_points(20, 3) {
            assert!(j.eval(&p).unwrap().iter().all(|v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn musical_isomorphisms() {
        let ch = Chart::standard(2);
        let e = Metric::euclidean(2);
        assert_eq!(flat(&e, &VectorField::coordinate(2, 0)).comps()[0].as_const(), Some(1.0));
        let g = Metric::parse(&ch, &[vec!["2 + x2^2", "x1"], vec!["x1", "3"]]).unwrap();
        let x = VectorField::parse(&ch, &["cos(x2)", "x1 - x2"]).unwrap();
        let back = sharp(&g, &flat(&g, &x)).unwrap();
        assert!(fields_agree(&back, &x, &ch.sample_points(20, 5), 1e-10));
    }

    #[test]
    fn euclidean_beltrami() {
        let ch = Chart::standard(2);
        let x1 = ch.parse("x1").unwrap();
        let b = beltrami(&Metric::euclidean(2), &x1, &x1).unwrap();
        assert_eq!(b.as_const(), Some(1.0));
    }

    #[test]
    fn closedness() {
        let ch = Chart::standard(2);
        let pts = ch.sample_points(16, 1);
        let exact = OneForm::exact(&ch.parse("x1*x2").unwrap(), 2);
        assert!(is_closed(&exact, &pts, 1e-12).unwrap().closed);
        let w = OneForm::new(vec![ch.parse("x2").unwrap(), Expr::zero()]);
        let r = is_closed(&w, &pts, 1e-12).unwrap();
        assert!(!r.closed);
        assert_eq!(r.residual, 1.0);
    }

    #[test]
    fn flat_spray_and_singular_metric() {
        let s = geodesic_spray(&Connection::flat(2));
        assert_eq!(s.comps()[0], Expr::var(2));
        assert!(s.comps()[2].is_zero() && s.comps()[3].is_zero());

        let ch = Chart::standard(2);
        let g = Metric::parse(&ch, &[vec!["x1", "0"], vec!["0", "1"]]).unwrap();
        let origin = vec![vec![0.0, 0.0]];
        assert!(matches!(
            g.check_nondegenerate(&origin),
            Err(GeometryError::Singular { .. })
        ));
        let zero = Metric::parse(&ch, &[vec!["x1", "x1"], vec!["x1", "x1"]]).unwrap();
        assert_eq!(
            gradient(&zero, &Expr::var(0)).unwrap_err(),
            GeometryError::SymbolicallySingular
        );
    }
}
