#![allow(dead_code)]

use std::path::PathBuf;

use gradiometer::expr::{Chart, Expr};
use gradiometer::geometry::{Metric, VectorField};
use gradiometer::io::{load_system, LoadedSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> LoadedSystem {
    load_system(&fixture_path(name), None).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn sigma1() -> LoadedSystem {
    fixture("example6_1_sigma1.json")
}

pub fn sigma2() -> LoadedSystem {
    fixture("example6_1_sigma2.json")
}

pub fn g1() -> Metric {
    sigma1().metric.expect("levi_civita fixture")
}

pub fn g2() -> Metric {
    sigma2().metric.expect("levi_civita fixture")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn coef(rng: &mut ChaCha8Rng) -> String {
    format!("{:.3}", rng.gen_range(-1.0..1.0))
}

/// Smooth function on the chart: affine part plus a product, a sine and an exponential term.
pub fn random_function(chart: &Chart, rng: &mut ChaCha8Rng) -> Expr {
    let n = chart.dim();
    let names = chart.names();
    let pick = |rng: &mut ChaCha8Rng| names[rng.gen_range(0..n)].clone();
    let mut terms = vec![coef(rng)];
    for name in names {
        terms.push(format!("({})*{name}", coef(rng)));
    }
    let (a, b) = (pick(rng), pick(rng));
    terms.push(format!("({})*{a}*{b}", coef(rng)));
    let a = pick(rng);
    terms.push(format!("({})*sin({a})", coef(rng)));
    let a = pick(rng);
    terms.push(format!("({})*exp(0.5*{a})", coef(rng)));
    chart.parse(&terms.join(" + ")).expect("generated function parses")
}

pub fn random_field(chart: &Chart, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::new((0..chart.dim()).map(|_| random_function(chart, rng)).collect())
}

/// `max |a - b|` over points, relative to `1 + |a|`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max)
}

/// Worst normalized residual between two expressions on the points.
pub fn expr_residual(a: &Expr, b: &Expr, points: &[Vec<f64>]) -> f64 {
    gradiometer::expr::compare_on_points(a, b, points, 0.0)
        .expect("expressions evaluate on the points")
        .max_residual
}

/// Worst component-wise normalized residual between two fields.
pub fn field_residual(a: &VectorField, b: &VectorField, points: &[Vec<f64>]) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.comps()
        .iter()
        .zip(b.comps())
        .map(|(x, y)| expr_residual(x, y, points))
        .fold(0.0, f64::max)
}
