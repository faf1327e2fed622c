//! Lifts from a base chart to its tangent `(x, v)` and cotangent `(x, p)` charts.
//!
//! Bundle coordinates use indices `0..n` for the base and `n..2n` for the fiber.

use thiserror::Error;

use crate::expr::{Chart, ChartError, Expr};
use crate::geometry::{Connection, Metric, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("connection has torsion; the Riemannian extension needs a torsion-free connection")]
    Torsion,
    #[error("cotangent gradients are only available for momentum and vertical functions")]
    Untagged,
}

pub fn tangent_chart(base: &Chart) -> Result<Chart, ChartError> {
    base.bundle("v")
}

pub fn cotangent_chart(base: &Chart) -> Result<Chart, ChartError> {
    base.bundle("p")
}

fn fiber(n: usize, a: usize) -> Expr {
    Expr::var(n + a)
}

/// `V^c = dV/dx^a v^a`.
pub fn complete_lift_fn(v: &Expr, n: usize) -> Expr {
    let terms = v
        .gradient(n)
        .into_iter()
        .enumerate()
        .filter(|(_, d)| !d.is_zero())
        .map(|(a, d)| Expr::product([d, fiber(n, a)]));
    Expr::sum(terms).simplify()
}

/// `V^v = V o pi`; the expression is unchanged since base indices are shared.
pub fn vertical_lift_fn(v: &Expr) -> Expr {
    v.clone()
}

/// `X^c = X^a d/dx^a + (dX^a/dx^b) v^b d/dv^a`.
pub fn complete_lift_vf(x: &VectorField) -> VectorField {
    let n = x.dim();
    let jac = x.jacobian();
    let mut comps = x.comps().to_vec();
    for row in &jac {
        let terms = row
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.is_zero())
            .map(|(b, d)| Expr::product([d.clone(), fiber(n, b)]));
        comps.push(Expr::sum(terms).simplify());
    }
    VectorField::new(comps)
}

/// `X^v = X^a d/dv^a`.
pub fn vertical_lift_vf(x: &VectorField) -> VectorField {
    let mut comps = vec![Expr::zero(); x.dim()];
    comps.extend(x.comps().iter().cloned());
    VectorField::new(comps)
}

/// Complete lift to the cotangent bundle: `X^a d/dx^a - p_b (dX^b/dx^a) d/dp_a`.
pub fn cotangent_complete_lift_vf(x: &VectorField) -> VectorField {
    let n = x.dim();
    let jac = x.jacobian();
    let mut comps = x.comps().to_vec();
    for a in 0..n {
        let terms = (0..n)
            .filter(|&b| !jac[b][a].is_zero())
            .map(|b| Expr::product([Expr::constant(-1.0), fiber(n, b), jac[b][a].clone()]));
        comps.push(Expr::sum(terms).simplify());
    }
    VectorField::new(comps)
}

/// `V^X(x, p) = p_a X^a(x)`.
pub fn momentum_fn(x: &VectorField) -> Expr {
    let n = x.dim();
    let terms = x
        .comps()
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(a, c)| Expr::product([fiber(n, a), c.clone()]));
    Expr::sum(terms).simplify()
}

/// `p_c Gamma^c_ab` as an `n x n` block.
fn contracted_symbols(conn: &Connection, scale: f64) -> Vec<Vec<Expr>> {
    let n = conn.dim();
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let terms = (0..n)
                        .filter(|&c| !conn.symbol(c, a, b).is_zero())
                        .map(|c| {
                            Expr::product([
                                Expr::constant(scale),
                                fiber(n, c),
                                conn.symbol(c, a, b).clone(),
                            ])
                        });
                    Expr::sum(terms).simplify()
                })
                .collect()
        })
        .collect()
}

fn block(top_left: Vec<Vec<Expr>>, bottom_right: Vec<Vec<Expr>>, n: usize) -> Vec<Vec<Expr>> {
    let mut m = vec![vec![Expr::zero(); 2 * n]; 2 * n];
    for a in 0..n {
        for b in 0..n {
            m[a][b] = top_left[a][b].clone();
            m[n + a][n + b] = bottom_right[a][b].clone();
        }
        m[a][n + a] = Expr::one();
        m[n + a][a] = Expr::one();
    }
    m
}

/// Riemannian extension on `T*M`: `[[-2 p_c Gamma^c_ab, I], [I, 0]]`.
pub fn riemannian_extension(conn: &Connection) -> Result<Metric, LiftError> {
    if !conn.is_torsion_free() {
        return Err(LiftError::Torsion);
    }
    let n = conn.dim();
    let zero = vec![vec![Expr::zero(); n]; n];
    Ok(Metric::new(block(contracted_symbols(conn, -2.0), zero, n)).expect("square block matrix"))
}

/// Inverse of the Riemannian extension: `[[0, I], [I, 2 p_c Gamma^c_ab]]`.
pub fn riemannian_extension_sharp(conn: &Connection) -> Result<Vec<Vec<Expr>>, LiftError> {
    if !conn.is_torsion_free() {
        return Err(LiftError::Torsion);
    }
    let n = conn.dim();
    let zero = vec![vec![Expr::zero(); n]; n];
    Ok(block(zero, contracted_symbols(conn, 2.0), n))
}

/// A function on `T*M` tagged with how it was built.
#[derive(Debug, Clone, PartialEq)]
pub enum CotangentFunction {
    Momentum(VectorField),
    Vertical(Expr),
    Other(Expr),
}

impl CotangentFunction {
    pub fn expr(&self) -> Expr {
        match self {
            CotangentFunction::Momentum(x) => momentum_fn(x),
            CotangentFunction::Vertical(v) => vertical_lift_fn(v),
            CotangentFunction::Other(e) => e.clone(),
        }
    }
}

/// Gradient with respect to the Riemannian extension of `conn`.
pub fn cotangent_gradient(conn: &Connection, f: &CotangentFunction) -> Result<VectorField, LiftError> {
    if !conn.is_torsion_free() {
        return Err(LiftError::Torsion);
    }
    let n = conn.dim();
    match f {
        CotangentFunction::Momentum(x) => {
            let jac = x.jacobian();
            let mut comps = x.comps().to_vec();
            for b in 0..n {
                let mut terms = Vec::new();
                for a in 0..n {
                    if !jac[a][b].is_zero() {
                        terms.push(Expr::product([fiber(n, a), jac[a][b].clone()]));
                    }
                    for c in 0..n {
                        let g = conn.symbol(a, b, c);
                        if !g.is_zero() && !x.component(c).is_zero() {
                            terms.push(Expr::product([
                                Expr::constant(2.0),
                                fiber(n, a),
                                g.clone(),
                                x.component(c).clone(),
                            ]));
                        }
                    }
                }
                comps.push(Expr::sum(terms).simplify());
            }
            Ok(VectorField::new(comps))
        }
        CotangentFunction::Vertical(v) => {
            let mut comps = vec![Expr::zero(); n];
            comps.extend(v.gradient(n));
            Ok(VectorField::new(comps))
        }
        CotangentFunction::Other(_) => Err(LiftError::Untagged),
    }
}

/// Embeds a base-chart field into a bundle chart with zero fiber components.
pub fn horizontal_embed(x: &VectorField) -> VectorField {
    let mut comps = x.comps().to_vec();
    comps.extend(std::iter::repeat_n(Expr::zero(), x.dim()));
    VectorField::new(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::compare_on_points;
    use crate::geometry::{christoffel_from_metric, lie_derivative, symmetric_product};

    fn base() -> Chart {
        Chart::standard(2)
    }

    fn bundle_points() -> Vec<Vec<f64>> {
        tangent_chart(&base()).unwrap().sample_points(20, 8)
    }

    fn agree(a: &Expr, b: &Expr) -> bool {
        compare_on_points(a, b, &bundle_points(), 1e-12).unwrap().equivalent
    }

    #[test]
    fn function_lifts() {
        let c = base();
        let x1 = c.parse("x1").unwrap();
        assert_eq!(complete_lift_fn(&x1, 2), Expr::var(2));
        let prod = complete_lift_fn(&c.parse("x1*x2").unwrap(), 2);
        let tc = tangent_chart(&c).unwrap();
        assert!(agree(&prod, &tc.parse("x2*v_x1 + x1*v_x2").unwrap()));
        assert!(complete_lift_fn(&Expr::constant(3.0), 2).is_zero());
        assert!(vertical_lift_fn(&x1).diff(2).is_zero());
    }

    #[test]
    fn vector_field_lifts_on_the_line() {
        let c = Chart::with_names(&["x"]).unwrap();
        let xdx = VectorField::parse(&c, &["x"]).unwrap();
        let lift = complete_lift_vf(&xdx);
        assert_eq!(lift.comps(), &[Expr::var(0), Expr::var(1)]);
        let dx = VectorField::coordinate(1, 0);
        assert_eq!(complete_lift_vf(&dx), VectorField::new(vec![Expr::one(), Expr::zero()]));
        assert_eq!(vertical_lift_vf(&dx), VectorField::new(vec![Expr::zero(), Expr::one()]));
    }

    #[test]
    fn lift_identities() {
        let c = base();
        let x = VectorField::parse(&c, &["x2*x1", "sin(x1)"]).unwrap();
        let f = c.parse("exp(x1) * x2^2").unwrap();
        let xc = complete_lift_vf(&x);
        let xv = vertical_lift_vf(&x);
        let fc = complete_lift_fn(&f, 2);
        let xf = lie_derivative(&x, &f);
        assert!(agree(&lie_derivative(&xc, &fc), &complete_lift_fn(&xf, 2)));
        assert!(agree(&lie_derivative(&xv, &fc), &vertical_lift_fn(&xf)));
        assert!(lie_derivative(&xv, &vertical_lift_fn(&f)).is_zero());
    }

    #[test]
    fn momentum_functions() {
        let c = base();
        assert_eq!(momentum_fn(&VectorField::coordinate(2, 0)), Expr::var(2));
        let x = VectorField::parse(&c, &["x2", "1"]).unwrap();
        let y = VectorField::parse(&c, &["x1^2", "x1"]).unwrap();
        let sum = momentum_fn(&x.add(&y));
        let parts = Expr::sum([momentum_fn(&x), momentum_fn(&y)]);
        assert!(agree(&sum, &parts));
    }

    #[test]
    fn flat_extension_blocks() {
        let g = riemannian_extension(&Connection::flat(2)).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let expected = if (a + 2 == b) || (b + 2 == a) { 1.0 } else { 0.0 };
                assert_eq!(g.entry(a, b).as_const(), Some(expected));
            }
        }
    }

    #[test]
    fn extension_sharp_inverts_flat() {
        let c = base();
        let g = Metric::parse(&c, &[vec!["1", "0"], vec!["0", "exp(x1)"]]).unwrap();
        let conn = christoffel_from_metric(&g).unwrap();
        let flat = riemannian_extension(&conn).unwrap();
        let sharp = riemannian_extension_sharp(&conn).unwrap();
        let sharp = Metric::new(sharp).unwrap();
        for p in cotangent_chart(&c).unwrap().sample_points(10, 3) {
            let prod = flat.eval(&p).unwrap() * sharp.eval(&p).unwrap();
            assert!((prod - nalgebra::DMatrix::identity(4, 4)).amax() < 1e-12);
        }
    }

    #[test]
    fn torsion_is_rejected() {
        let conn = Connection::from_entries(2, [(0, 0, 1, Expr::one())]).unwrap();
        assert_eq!(riemannian_extension(&conn), Err(LiftError::Torsion));
        let f = CotangentFunction::Vertical(Expr::var(0));
        assert_eq!(cotangent_gradient(&conn, &f), Err(LiftError::Torsion));
    }

    #[test]
    fn cotangent_gradient_formulas() {
        let flat = Connection::flat(2);
        let g = cotangent_gradient(&flat, &CotangentFunction::Momentum(VectorField::coordinate(2, 0)))
            .unwrap();
        assert_eq!(g, horizontal_embed(&VectorField::coordinate(2, 0)));
        let g = cotangent_gradient(&flat, &CotangentFunction::Vertical(Expr::var(0))).unwrap();
        assert_eq!(g, VectorField::new(vec![Expr::zero(), Expr::zero(), Expr::one(), Expr::zero()]));
        assert_eq!(
            cotangent_gradient(&flat, &CotangentFunction::Other(Expr::var(3))),
            Err(LiftError::Untagged)
        );
    }

    #[test]
    fn gradient_of_momentum_reproduces_symmetric_product() {
        let c = base();
        let g = Metric::parse(&c, &[vec!["2 + x2^2", "x1"], vec!["x1", "3"]]).unwrap();
        let conn = christoffel_from_metric(&g).unwrap();
        let x = VectorField::parse(&c, &["x2", "cos(x1)"]).unwrap();
        let y = VectorField::parse(&c, &["x1*x2", "1"]).unwrap();
        let grad = cotangent_gradient(&conn, &CotangentFunction::Momentum(x.clone())).unwrap();
        let lhs = lie_derivative(&grad, &momentum_fn(&y));
        let rhs = momentum_fn(&symmetric_product(&conn, &x, &y));
        let pts = cotangent_chart(&c).unwrap().sample_points(20, 4);
        assert!(compare_on_points(&lhs, &rhs, &pts, 1e-10).unwrap().equivalent);

        let ext = riemannian_extension(&conn).unwrap();
        let inner = ext.inner(&cotangent_complete_lift_vf(&x), &cotangent_complete_lift_vf(&y));
        let r = compare_on_points(&inner, &Expr::neg(rhs), &pts, 1e-10).unwrap();
        assert!(r.equivalent, "{}", r.max_residual);
    }
}
