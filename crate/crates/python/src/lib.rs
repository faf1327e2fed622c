//! Python bindings: expressions, metrics and control systems with their analyses.
//! Structured reports cross the boundary as plain dicts.

use std::path::PathBuf;

use gradiometer::compat::{check_condition_a, check_condition_b, ConditionReport};
use gradiometer::expr::{Chart, Expr};
use gradiometer::geometry::{christoffel_from_metric, gradient, Metric};
use gradiometer::io::{load_system, LoadedSystem};
use gradiometer::realization::{
    characterize, default_initial_condition, default_signals, isometry_residual_at, CharacterizeOptions,
    ReconstructionMode,
};
use gradiometer::sim::conjugacy_check;
use gradiometer::systems::observability_rank;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{json, Value};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<PyObject> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn chart_for(names: Option<Vec<String>>, n: usize) -> PyResult<Chart> {
    match names {
        Some(names) => Chart::with_names(&names).map_err(err),
        None => Ok(Chart::standard(n)),
    }
}

fn condition_json(c: &ConditionReport) -> Value {
    json!({
        "holds": c.holds,
        "identities": c.identities,
        "max_residual": c.max_residual,
        "witness": c.worst.as_ref().map(|w| json!({
            "identity": w.identity, "point": w.point, "lhs": w.lhs, "rhs": w.rhs,
        })),
    })
}

/// A parsed expression over a chart (defaults to `x1..xn`).
#[pyclass(name = "Expr", module = "gradiometer_py", frozen)]
#[derive(Clone)]
struct PyExpr {
    expr: Expr,
    chart: Chart,
}

#[pymethods]
impl PyExpr {
    #[new]
    #[pyo3(signature = (source, dim=None, names=None))]
    fn new(source: &str, dim: Option<usize>, names: Option<Vec<String>>) -> PyResult<Self> {
        let chart = chart_for(names, dim.unwrap_or(1))?;
        let expr = chart.parse(source).map_err(err)?;
        Ok(Self { expr, chart })
    }

    fn eval(&self, point: Vec<f64>) -> PyResult<f64> {
        self.expr.eval(&point).map_err(err)
    }

    /// Partial derivative with respect to a coordinate name.
    fn diff(&self, name: &str) -> PyResult<Self> {
        let i = self
            .chart
            .index_of(name)
            .ok_or_else(|| err(format!("unknown coordinate {name}")))?;
        Ok(Self {
            expr: self.expr.diff(i),
            chart: self.chart.clone(),
        })
    }

    fn __str__(&self) -> String {
        self.expr.display(&self.chart).to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr('{}')", self.__str__())
    }
}

/// A pseudo-Riemannian metric given by symmetric matrix entries.
#[pyclass(name = "Metric", module = "gradiometer_py", frozen)]
struct PyMetric {
    metric: Metric,
    chart: Chart,
}

#[pymethods]
impl PyMetric {
    #[new]
    #[pyo3(signature = (rows, names=None))]
    fn new(rows: Vec<Vec<String>>, names: Option<Vec<String>>) -> PyResult<Self> {
        let chart = chart_for(names, rows.len())?;
        let metric = Metric::parse(&chart, &rows).map_err(err)?;
        Ok(Self { metric, chart })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn eval(&self, point: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let m = self.metric.eval(&point).map_err(err)?;
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Components of the gradient of a function, as expression strings.
    fn gradient(&self, source: &str) -> PyResult<Vec<String>> {
        let f = self.chart.parse(source).map_err(err)?;
        let g = gradient(&self.metric, &f).map_err(err)?;
        Ok(g.comps().iter().map(|c| c.display(&self.chart).to_string()).collect())
    }

    /// Levi-Civita symbols at a point, indexed `[a][b][c]` for `Gamma^a_bc`.
    fn christoffel(&self, point: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let conn = christoffel_from_metric(&self.metric).map_err(err)?;
        let n = self.metric.dim();
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| (0..n).map(|c| conn.symbol(a, b, c).eval(&point).map_err(err)).collect())
                    .collect()
            })
            .collect()
    }

    /// `max |J^T other(psi) J - self|` at a point for a map given by component strings.
    fn isometry_residual(&self, other: &PyMetric, psi: Vec<String>, point: Vec<f64>) -> PyResult<f64> {
        let psi: Vec<Expr> = psi.iter().map(|s| self.chart.parse(s)).collect::<Result<_, _>>().map_err(err)?;
        isometry_residual_at(&self.metric, &other.metric, &psi, &point).map_err(err)
    }
}

/// A control system loaded from a JSON system file.
#[pyclass(name = "System", module = "gradiometer_py", frozen)]
struct PySystem {
    loaded: LoadedSystem,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    #[pyo3(signature = (path, bounds=None))]
    fn load(path: PathBuf, bounds: Option<Vec<(f64, f64)>>) -> PyResult<Self> {
        Ok(Self {
            loaded: load_system(&path, bounds).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.loaded.system.dim()
    }

    #[getter]
    fn inputs(&self) -> usize {
        self.loaded.system.inputs().len()
    }

    fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        self.loaded.system.chart().sample_points(count, seed)
    }

    #[pyo3(signature = (depth=3, samples=64, seed=42, numeric=false, simulate=true))]
    fn characterize(
        &self,
        py: Python<'_>,
        depth: usize,
        samples: usize,
        seed: u64,
        numeric: bool,
        simulate: bool,
    ) -> PyResult<PyObject> {
        let opts = CharacterizeOptions {
            depth,
            samples,
            seed,
            mode: if numeric { ReconstructionMode::Numeric } else { ReconstructionMode::Auto },
            simulate,
            ..Default::default()
        };
        let l = &self.loaded;
        let r = py.allow_threads(|| characterize(&l.system, &l.connection, &opts));
        let origin = vec![0.0; l.system.dim()];
        let v = json!({
            "verdict": serde_json::to_value(&r.verdict).map_err(err)?,
            "stages": serde_json::to_value(&r.stages).map_err(err)?,
            "basis": r.basis,
            "candidate_at_origin": r.candidate.as_ref().and_then(|g| g.at(&origin).ok())
                .map(|m| m.row_iter().map(|row| row.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()),
        });
        to_py(py, &v)
    }

    #[pyo3(signature = (depth_a=2, depth_b=1, samples=64, seed=42, tol=1e-8))]
    fn compatibility(
        &self,
        py: Python<'_>,
        depth_a: usize,
        depth_b: usize,
        samples: usize,
        seed: u64,
        tol: f64,
    ) -> PyResult<PyObject> {
        let l = &self.loaded;
        let pts = l.system.chart().sample_points(samples, seed);
        let a = check_condition_a(&l.system, &l.connection, depth_a, &pts, tol).map_err(err)?;
        let b = check_condition_b(&l.system, &l.connection, depth_b, &pts, tol).map_err(err)?;
        to_py(py, &json!({"a": condition_json(&a), "b": condition_json(&b), "holds": a.holds && b.holds}))
    }

    #[pyo3(signature = (depth=3, samples=64, seed=42))]
    fn observability_rank(&self, py: Python<'_>, depth: usize, samples: usize, seed: u64) -> PyResult<Py<PyDict>> {
        let s = &self.loaded.system;
        let r = observability_rank(s, depth, &s.chart().sample_points(samples, seed), 1e-8, 1e-8).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("min_rank", r.min_rank)?;
        d.set_item("max_rank", r.max_rank)?;
        d.set_item("full", r.full)?;
        d.set_item("constant", r.constant)?;
        d.set_item("witness", r.witness)?;
        Ok(d.unbind())
    }

    /// Conjugacy residual against the file's Levi-Civita metric with seeded signals.
    #[pyo3(signature = (seed=42, step=1e-3, horizon=1.0))]
    fn conjugacy(&self, py: Python<'_>, seed: u64, step: f64, horizon: f64) -> PyResult<PyObject> {
        let l = &self.loaded;
        let g = l
            .metric
            .as_ref()
            .ok_or_else(|| err("system file has no metric; use characterize"))?;
        let (x0, v0) = default_initial_condition(&l.system, seed);
        let (u, up) = default_signals(l.system.inputs().len(), horizon, seed);
        let r = conjugacy_check(&l.system, g, &l.connection, &x0, &v0, &u, &up, step, horizon).map_err(err)?;
        to_py(
            py,
            &json!({
                "residual": r.residual,
                "state_residual": r.state_residual,
                "output_residual": r.output_residual,
                "witness_time": r.witness_time,
                "steps": r.steps,
            }),
        )
    }
}

#[pymodule]
fn gradiometer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_class::<PyMetric>()?;
    m.add_class::<PySystem>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
