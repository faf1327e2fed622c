//! Fixed-step RK4 simulation under piecewise-constant controls, plus the
//! variational and conjugacy checks built on it.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::geometry::{Connection, Metric};
use crate::systems::{gradient_extension, prolong, ControlSystem, SystemError};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 1.0;
/// Guard box is the chart box scaled by this factor.
pub const GUARD_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{source} at t = {time}")]
    Domain { time: f64, source: EvalError },
    #[error("state left the guard box at t = {time}: {state:?}")]
    Guard { time: f64, state: Vec<f64> },
    #[error("horizon {horizon} is not a positive multiple of step {step}")]
    Step { step: f64, horizon: f64 },
    #[error("invalid control signal: {0}")]
    Signal(String),
    #[error("state has {got} entries, system has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("metric evaluation failed at {point:?}: {message}")]
    Metric { point: Vec<f64>, message: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Piecewise-constant, right-continuous input `u(t) = values[k]` on `[breakpoints[k], breakpoints[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
    duration: f64,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>, duration: f64) -> Result<Self, SimError> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(SimError::Signal(
                "need one value vector per breakpoint".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(SimError::Signal("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::Signal("breakpoints must be strictly increasing".into()));
        }
        if breakpoints.last().is_some_and(|&b| b >= duration) && breakpoints.len() > 1 {
            return Err(SimError::Signal("breakpoints must lie before the end of the signal".into()));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(SimError::Signal("input vectors differ in length".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::Signal("input values must be finite".into()));
        }
        Ok(ControlSignal {
            breakpoints,
            values,
            duration,
        })
    }

    pub fn constant(u: Vec<f64>, duration: f64) -> Self {
        ControlSignal::new(vec![0.0], vec![u], duration).expect("constant signal is valid")
    }

    pub fn zero(m: usize, duration: f64) -> Self {
        ControlSignal::constant(vec![0.0; m], duration)
    }

    /// Two intervals of equal length with values uniform in `[-0.5, 0.5]^m`.
    pub fn random(m: usize, duration: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..2)
            .map(|_| (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        ControlSignal::new(vec![0.0, 0.5 * duration], values, duration).expect("valid random signal")
    }

    pub fn inputs(&self) -> usize {
        self.values[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let k = self.breakpoints.partition_point(|&b| b <= t).max(1) - 1;
        &self.values[k]
    }

    /// `(a(t), b(t))` on the union of breakpoints.
    pub fn stack(a: &ControlSignal, b: &ControlSignal) -> ControlSignal {
        let mut bps: Vec<f64> = a.breakpoints.iter().chain(&b.breakpoints).copied().collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let values = bps
            .iter()
            .map(|&t| {
                let mut v = a.value_at(t).to_vec();
                v.extend_from_slice(b.value_at(t));
                v
            })
            .collect();
        ControlSignal {
            breakpoints: bps,
            values,
            duration: a.duration.min(b.duration),
        }
    }

    /// `a + eps * b`.
    pub fn perturbed(a: &ControlSignal, b: &ControlSignal, eps: f64) -> ControlSignal {
        let stacked = ControlSignal::stack(a, b);
        let m = a.inputs();
        let values = stacked
            .values
            .iter()
            .map(|v| (0..m).map(|j| v[j] + eps * v[m + j]).collect())
            .collect();
        ControlSignal {
            values,
            ..stacked
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories contain the initial state")
    }

    /// Header `t,x_1..x_k,y_1..y_l`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.states.first().map_or(0, Vec::len);
        let l = self.outputs.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("x_{i}")));
        header.extend((1..=l).map(|i| format!("y_{i}")));
        out.write_record(&header)?;
        for ((t, x), y) in self.times.iter().zip(&self.states).zip(&self.outputs) {
            let mut row = vec![format!("{t}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.extend(y.iter().map(|v| format!("{v:e}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Right-hand side `g0 + u_j g_j`.
struct Dynamics<'a> {
    drift: &'a [Expr],
    inputs: Vec<&'a [Expr]>,
}

impl Dynamics<'_> {
    fn eval(&self, x: &[f64], u: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
        let dom = |source| SimError::Domain { time: t, source };
        let mut dx = Expr::eval_all(self.drift, x).map_err(dom)?;
        for (g, &uj) in self.inputs.iter().zip(u) {
            if uj == 0.0 {
                continue;
            }
            for (d, c) in dx.iter_mut().zip(g.iter()) {
                *d += uj * c.eval(x).map_err(dom)?;
            }
        }
        Ok(dx)
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(x, k)| x + a * k).collect()
}

fn steps(h: f64, horizon: f64) -> Result<usize, SimError> {
    let bad = SimError::Step { step: h, horizon };
    if !(h > 0.0) || !(horizon > 0.0) || !h.is_finite() || !horizon.is_finite() {
        return Err(bad);
    }
    let n = (horizon / h).round();
    if n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(bad);
    }
    Ok(n as usize)
}

/// Default guard box for a system: its chart box scaled by [`GUARD_FACTOR`].
pub fn default_guard(s: &ControlSystem) -> Vec<(f64, f64)> {
    s.chart().scaled_bounds(GUARD_FACTOR)
}

/// Classical RK4 on the grid `t_k = k h`; the control is sampled at `t_k`.
pub fn integrate(
    s: &ControlSystem,
    x0: &[f64],
    u: &ControlSignal,
    h: f64,
    horizon: f64,
    guard: Option<&[(f64, f64)]>,
) -> Result<Trajectory, SimError> {
    if x0.len() != s.dim() {
        return Err(SimError::Dimension {
            expected: s.dim(),
            got: x0.len(),
        });
    }
    if u.inputs() != s.input_count() {
        return Err(SimError::Signal(format!(
            "signal has {} inputs, system has {}",
            u.inputs(),
            s.input_count()
        )));
    }
    let count = steps(h, horizon)?;
    let default_box;
    let guard = match guard {
        Some(g) => g,
        None => {
            default_box = default_guard(s);
            &default_box
        }
    };
    let dynamics = Dynamics {
        drift: s.drift().comps(),
        inputs: s.inputs().iter().map(|g| g.comps()).collect(),
    };
    let outputs = |x: &[f64], t: f64| {
        Expr::eval_all(s.outputs(), x).map_err(|source| SimError::Domain { time: t, source })
    };
    let mut traj = Trajectory {
        times: Vec::with_capacity(count + 1),
        states: Vec::with_capacity(count + 1),
        outputs: Vec::with_capacity(count + 1),
    };
    let mut x = x0.to_vec();
    traj.times.push(0.0);
    traj.outputs.push(outputs(&x, 0.0)?);
    traj.states.push(x.clone());
    for k in 0..count {
        let t = k as f64 * h;
        let uk = u.value_at(t);
        let k1 = dynamics.eval(&x, uk, t)?;
        let k2 = dynamics.eval(&axpy(&x, 0.5 * h, &k1), uk, t + 0.5 * h)?;
        let k3 = dynamics.eval(&axpy(&x, 0.5 * h, &k2), uk, t + 0.5 * h)?;
        let k4 = dynamics.eval(&axpy(&x, h, &k3), uk, t + h)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t1 = (k + 1) as f64 * h;
        let outside = x
            .iter()
            .zip(guard)
            .any(|(v, (lo, hi))| !v.is_finite() || *v < *lo || *v > *hi);
        if outside {
            return Err(SimError::Guard {
                time: t1,
                state: x,
            });
        }
        traj.times.push(t1);
        traj.outputs.push(outputs(&x, t1)?);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub epsilon: f64,
    /// `max_t |v(t) - (x_eps(t) - x(t)) / eps|`.
    pub residual: f64,
    pub witness_time: f64,
}

/// Compares the prolonged state `v(t)` (with `v(0) = 0`) against a forward difference quotient.
#[allow(clippy::too_many_arguments)]
pub fn variational_fd_check(
    s: &ControlSystem,
    x0: &[f64],
    u: &ControlSignal,
    direction: &ControlSignal,
    eps: f64,
    h: f64,
    horizon: f64,
) -> Result<FdReport, SimError> {
    let n = s.dim();
    let p = prolong(s)?;
    let mut xp0 = x0.to_vec();
    xp0.extend(std::iter::repeat_n(0.0, n));
    let lifted = integrate(&p.system, &xp0, &ControlSignal::stack(u, direction), h, horizon, None)?;
    let base = integrate(s, x0, u, h, horizon, None)?;
    let shifted = integrate(s, x0, &ControlSignal::perturbed(u, direction, eps), h, horizon, None)?;
    let mut report = FdReport {
        epsilon: eps,
        residual: 0.0,
        witness_time: 0.0,
    };
    for k in 0..base.times.len() {
        for i in 0..n {
            let quotient = (shifted.states[k][i] - base.states[k][i]) / eps;
            let r = (lifted.states[k][n + i] - quotient).abs();
            if r > report.residual {
                report.residual = r;
                report.witness_time = base.times[k];
            }
        }
    }
    Ok(report)
}

/// Pointwise metric values for the flat map `(x, v) -> (x, G(x) v)`.
pub trait MetricField {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>, String>;
}

impl MetricField for Metric {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>, String> {
        self.eval(x).map_err(|e| e.to_string())
    }
}

fn flat_map(g: &dyn MetricField, xv: &[f64], n: usize, time: f64) -> Result<Vec<f64>, SimError> {
    let x = &xv[..n];
    let m = g.metric_at(x).map_err(|message| SimError::Metric {
        point: x.to_vec(),
        message,
    })?;
    if m.nrows() != n || m.ncols() != n {
        return Err(SimError::Metric {
            point: x.to_vec(),
            message: format!("metric is {}x{}, expected {n}x{n}", m.nrows(), m.ncols()),
        });
    }
    let v = nalgebra::DVector::from_column_slice(&xv[n..]);
    let p = m * v;
    if p.iter().any(|c| !c.is_finite()) {
        return Err(SimError::Metric {
            point: x.to_vec(),
            message: format!("non-finite metric value at t = {time}"),
        });
    }
    let mut out = x.to_vec();
    out.extend(p.iter());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyReport {
    /// `max_t |flat(x_p(t)) - x_e(t)|`.
    pub state_residual: f64,
    /// `max_t |y_p(t) - y_e(t)|` over all `2m` outputs.
    pub output_residual: f64,
    pub residual: f64,
    pub witness_time: f64,
    pub steps: usize,
}

/// Integrates the prolongation from `(x0, v0)` and the gradient extension from
/// `flat_G(x0, v0)` under the same inputs and compares them along the grid.
#[allow(clippy::too_many_arguments)]
pub fn conjugacy_check(
    s: &ControlSystem,
    g: &dyn MetricField,
    conn: &Connection,
    x0: &[f64],
    v0: &[f64],
    u: &ControlSignal,
    up: &ControlSignal,
    h: f64,
    horizon: f64,
) -> Result<ConjugacyReport, SimError> {
    let n = s.dim();
    if v0.len() != n {
        return Err(SimError::Dimension {
            expected: n,
            got: v0.len(),
        });
    }
    let p = prolong(s)?;
    let e = gradient_extension(s, conn)?;
    let inputs = ControlSignal::stack(u, up);
    let mut xp0 = x0.to_vec();
    xp0.extend_from_slice(v0);
    let xe0 = flat_map(g, &xp0, n, 0.0)?;
    let tp = integrate(&p.system, &xp0, &inputs, h, horizon, None)?;
    let te = integrate(&e.system, &xe0, &inputs, h, horizon, None)?;
    let mut report = ConjugacyReport {
        state_residual: 0.0,
        output_residual: 0.0,
        residual: 0.0,
        witness_time: 0.0,
        steps: tp.times.len() - 1,
    };
    for k in 0..tp.times.len() {
        let mapped = flat_map(g, &tp.states[k], n, tp.times[k])?;
        let ds = mapped
            .iter()
            .zip(&te.states[k])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dy = tp.outputs[k]
            .iter()
            .zip(&te.outputs[k])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.state_residual = report.state_residual.max(ds);
        report.output_residual = report.output_residual.max(dy);
        if ds.max(dy) > report.residual {
            report.residual = ds.max(dy);
            report.witness_time = tp.times[k];
        }
    }
    Ok(report)
}
