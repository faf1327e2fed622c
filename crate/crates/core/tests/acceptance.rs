//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use gradiometer::compat::{check_condition_a, check_condition_b};
use gradiometer::expr::{Chart, Expr};
use gradiometer::geometry::{
    beltrami, christoffel_from_metric, gradient, lie_derivative, metric_compatibility_residual,
    symmetric_product, torsion, Connection, Metric, VectorField,
};
use gradiometer::lifts::{
    cotangent_chart, cotangent_complete_lift_vf, cotangent_gradient, momentum_fn, riemannian_extension,
    vertical_lift_fn, CotangentFunction,
};
use gradiometer::realization::{
    characterize, default_initial_condition, default_signals, isometry_residual_at, CharacterizeOptions, Verdict,
};
use gradiometer::sim::{conjugacy_check, variational_fd_check, ControlSignal};
use gradiometer::systems::observability_rank;
use nalgebra::DMatrix;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:?}, limit {limit:?}"))
}

fn example_gradients() -> Outcome {
    let start = Instant::now();
    let chart = Chart::standard(4);
    let pts = chart.sample_points(64, 42);
    let l = sigma1();
    let v = l.system.outputs();
    let parse = |c: [&str; 4]| VectorField::new(c.iter().map(|s| chart.parse(s).unwrap()).collect());
    let expected = [parse(["1", "0", "0", "0"]), parse(["0", "exp(x4)", "exp(x1)", "exp(x3)"])];
    let (a, b) = (g1(), g2());
    let mut worst = 0.0f64;
    for (vj, want) in v.iter().zip(&expected) {
        let ga = gradient(&a, vj).map_err(|e| e.to_string())?;
        let gb = gradient(&b, vj).map_err(|e| e.to_string())?;
        worst = worst.max(field_residual(want, &ga, &pts)).max(field_residual(&ga, &gb, &pts));
    }
    ensure(worst <= 1e-10, format!("residual {worst:.2e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("residual {worst:.1e} in {:?}", start.elapsed()))
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let l = sigma1();
    let opts = CharacterizeOptions::default();
    let report = characterize(&l.system, &l.connection, &opts);
    ensure(report.verdict == Verdict::LocallyGradient, format!("verdict {:?}", report.verdict))?;
    let g = report.candidate.ok_or("no candidate")?;
    let expected = g1();
    let mut worst = 0.0f64;
    for p in l.system.chart().sample_points(opts.samples, opts.seed) {
        let want = expected.eval(&p).unwrap();
        let got = g.at(&p).map_err(|e| e.to_string())?;
        worst = worst.max((&got - &want).amax() / want.amax());
    }
    ensure(worst <= 1e-6, format!("relative mismatch {worst:.2e}"))?;
    let origin = (g.at(&[0.0; 4]).map_err(|e| e.to_string())? - DMatrix::identity(4, 4)).amax();
    ensure(origin <= 1e-12, format!("origin differs from identity by {origin:.2e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("relative {worst:.1e}, identity at origin, {:?}", start.elapsed()))
}

fn non_isometry() -> Outcome {
    let id: Vec<Expr> = (0..4).map(Expr::var).collect();
    let r = isometry_residual_at(&g1(), &g2(), &id, &[0.0; 4]).map_err(|e| e.to_string())?;
    ensure(r >= 0.9, format!("residual {r}"))?;
    Ok(format!("identity map residual {r} at the origin"))
}

fn compatibility() -> Outcome {
    let l = sigma1();
    let pts = l.system.chart().sample_points(64, 42);
    let a = check_condition_a(&l.system, &l.connection, 2, &pts, 1e-8).map_err(|e| e.to_string())?;
    let b = check_condition_b(&l.system, &l.connection, 1, &pts, 1e-8).map_err(|e| e.to_string())?;
    ensure(a.holds && a.max_residual <= 1e-8, format!("(a) residual {:.2e}", a.max_residual))?;
    ensure(b.holds && b.max_residual <= 1e-8, format!("(b) residual {:.2e}", b.max_residual))?;

    // Both example systems share inputs and outputs, so the second Levi-Civita
    // connection is compatible as well; a perturbed connection has to be rejected.
    let other = sigma2().connection;
    let a2 = check_condition_a(&l.system, &other, 2, &pts, 1e-8).map_err(|e| e.to_string())?;
    let b2 = check_condition_b(&l.system, &other, 1, &pts, 1e-8).map_err(|e| e.to_string())?;
    let wrong = fixture("example6_1_sigma1_wrong_connection.json").connection;
    let aw = check_condition_a(&l.system, &wrong, 2, &pts, 1e-8).map_err(|e| e.to_string())?;
    let bw = check_condition_b(&l.system, &wrong, 1, &pts, 1e-8).map_err(|e| e.to_string())?;
    let witness = aw.max_residual.max(bw.max_residual);
    ensure(!(aw.holds && bw.holds) && witness >= 1e-2, format!("perturbed connection accepted ({witness:.2e})"))?;

    // Conjugacy with the second connection still exposes the mismatch against the first metric.
    let (x0, v0) = default_initial_condition(&l.system, 42);
    let (u, up) = default_signals(2, 1.0, 42);
    let sim = conjugacy_check(&l.system, &g1(), &other, &x0, &v0, &u, &up, 1e-3, 1.0).map_err(|e| e.to_string())?;
    ensure(sim.residual >= 1e-2, format!("second connection conjugate ({:.2e})", sim.residual))?;
    Ok(format!(
        "(a) {:.1e}, (b) {:.1e}; perturbed witness {witness:.2e}; note: second connection also compatible \
         ((a) {}, (b) {}) since the systems coincide, its conjugacy residual against the first metric is {:.2e}",
        a.max_residual, b.max_residual, a2.holds, b2.holds, sim.residual
    ))
}

fn lemma_suite() -> Outcome {
    let chart = Chart::standard(4);
    let pts = cotangent_chart(&chart).unwrap().sample_points(12, 5);
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for conn in [Connection::flat(4), christoffel_from_metric(&g1()).unwrap()] {
        for _ in 0..20 {
            let (x, y) = (random_field(&chart, &mut r), random_field(&chart, &mut r));
            let (f, h) = (random_function(&chart, &mut r), random_function(&chart, &mut r));
            let gx = cotangent_gradient(&conn, &CotangentFunction::Momentum(x.clone())).map_err(|e| e.to_string())?;
            let gf = cotangent_gradient(&conn, &CotangentFunction::Vertical(f.clone())).map_err(|e| e.to_string())?;
            let xf = vertical_lift_fn(&lie_derivative(&x, &f));
            worst = [
                expr_residual(&lie_derivative(&gx, &momentum_fn(&y)), &momentum_fn(&symmetric_product(&conn, &x, &y)), &pts),
                expr_residual(&lie_derivative(&gx, &vertical_lift_fn(&f)), &xf, &pts),
                expr_residual(&lie_derivative(&gf, &momentum_fn(&x)), &xf, &pts),
                expr_residual(&lie_derivative(&gf, &vertical_lift_fn(&h)), &Expr::zero(), &pts),
            ]
            .into_iter()
            .fold(worst, f64::max);
        }
    }
    ensure(worst <= 1e-8, format!("residual {worst:.2e}"))?;
    Ok(format!("40 pairs, residual {worst:.1e}"))
}

fn extension_identity() -> Outcome {
    let chart = Chart::standard(4);
    let pts = cotangent_chart(&chart).unwrap().sample_points(12, 6);
    let conn = christoffel_from_metric(&g1()).unwrap();
    let ext = riemannian_extension(&conn).map_err(|e| e.to_string())?;
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (x, y) = (random_field(&chart, &mut r), random_field(&chart, &mut r));
        let lhs = ext.inner(&cotangent_complete_lift_vf(&x), &cotangent_complete_lift_vf(&y));
        let rhs = Expr::neg(momentum_fn(&symmetric_product(&conn, &x, &y)));
        worst = worst.max(expr_residual(&lhs, &rhs, &pts));
    }
    ensure(worst <= 1e-8, format!("residual {worst:.2e}"))?;
    Ok(format!("20 pairs, residual {worst:.1e}"))
}

fn conjugacy() -> Outcome {
    let l = sigma1();
    let g = g1();
    let (x0, v0) = default_initial_condition(&l.system, 42);
    let (u, up) = default_signals(2, 1.0, 42);
    let run = |u: &ControlSignal, up: &ControlSignal, h: f64| {
        conjugacy_check(&l.system, &g, &l.connection, &x0, &v0, u, up, h, 1.0).map(|r| r.residual)
    };
    let res = run(&u, &up, 1e-3).map_err(|e| e.to_string())?;
    ensure(res <= 1e-6, format!("residual {res:.2e}"))?;
    // at h = 1e-3 the error sits at round-off, so the order is read off coarser steps
    let cu = ControlSignal::constant(vec![0.4, -0.3], 1.0);
    let cup = ControlSignal::constant(vec![0.2, 0.5], 1.0);
    let coarse = run(&cu, &cup, 0.1).map_err(|e| e.to_string())?;
    let fine = run(&cu, &cup, 0.05).map_err(|e| e.to_string())?;
    let ratio = coarse / fine;
    ensure((11.3..=22.6).contains(&ratio), format!("halving ratio {ratio:.2}"))?;
    Ok(format!("residual {res:.1e}, halving ratio {ratio:.1}"))
}

fn variational() -> Outcome {
    let s = sigma1().system;
    let x0 = [0.1, 0.2, -0.3, 0.4];
    let u = ControlSignal::constant(vec![0.3, -0.2], 0.5);
    let d = ControlSignal::random(2, 0.5, 7);
    let a = variational_fd_check(&s, &x0, &u, &d, 1e-5, 1e-3, 0.5).map_err(|e| e.to_string())?;
    let b = variational_fd_check(&s, &x0, &u, &d, 5e-6, 1e-3, 0.5).map_err(|e| e.to_string())?;
    ensure(a.residual <= 1e-3, format!("residual {:.2e}", a.residual))?;
    let ratio = a.residual / b.residual;
    ensure((1.6..=2.4).contains(&ratio), format!("decay ratio {ratio:.2}"))?;
    Ok(format!("residual {:.1e}, decay ratio {ratio:.2}", a.residual))
}

fn levi_civita() -> Outcome {
    let chart = Chart::standard(4);
    let pts = chart.sample_points(32, 9);
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for g in [Metric::euclidean(4), g1(), g2()] {
        let conn = christoffel_from_metric(&g).map_err(|e| e.to_string())?;
        ensure(conn.is_torsion_free(), "torsion")?;
        worst = worst.max(metric_compatibility_residual(&g, &conn, &pts).map_err(|e| e.to_string())?);
        let (x, y) = (random_field(&chart, &mut r), random_field(&chart, &mut r));
        worst = worst.max(field_residual(&VectorField::zero(4), &torsion(&conn, &x, &y), &pts));
    }
    let g = g1();
    let conn = christoffel_from_metric(&g).unwrap();
    for _ in 0..20 {
        let (f, h) = (random_function(&chart, &mut r), random_function(&chart, &mut r));
        let lhs = gradient(&g, &beltrami(&g, &f, &h).unwrap()).unwrap();
        let rhs = symmetric_product(&conn, &gradient(&g, &f).unwrap(), &gradient(&g, &h).unwrap());
        worst = worst.max(field_residual(&lhs, &rhs, &pts));
    }
    ensure(worst <= 1e-8, format!("residual {worst:.2e}"))?;
    Ok(format!("residual {worst:.1e}"))
}

fn observability() -> Outcome {
    let s = sigma1().system;
    let pts = s.chart().sample_points(64, 42);
    let rank = observability_rank(&s, 2, &pts, 1e-8, 1e-8).map_err(|e| e.to_string())?;
    ensure(rank.full && rank.min_rank == 4, format!("min rank {}", rank.min_rank))?;
    let toy = fixture("euclidean_toy_single_input.json").system;
    let tpts = toy.chart().sample_points(64, 42);
    let t = observability_rank(&toy, 3, &tpts, 1e-8, 1e-8).map_err(|e| e.to_string())?;
    ensure(!t.full && t.max_rank == 1, format!("toy rank {}", t.max_rank))?;
    Ok("rank 4 at all 64 samples, toy rank 1".to_string())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("example gradients", example_gradients),
        ("metric round trip", round_trip),
        ("non-isometry", non_isometry),
        ("compatibility", compatibility),
        ("cotangent lemma identities", lemma_suite),
        ("riemannian extension identity", extension_identity),
        ("conjugacy simulation", conjugacy),
        ("variational difference quotient", variational),
        ("levi-civita properties", levi_civita),
        ("observability rank", observability),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
