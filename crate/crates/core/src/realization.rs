//! Gradient realization: candidate metric reconstruction from an `S_0` basis,
//! the verification stages, the end-to-end characterization, and isometry tests.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::compat::{
    check_compatibility_on_basis, check_condition_a, check_condition_b, CompatError, DEFAULT_DEPTH_A,
    DEFAULT_DEPTH_B,
};
use crate::expr::{sample_box, EvalError, Expr, SampleError};
use crate::geometry::{christoffel_numeric, Connection, GeometryError, Metric, VectorField};
use crate::linalg::{symbolic_inverse, RANK_TOL, SYMBOLIC_MAX_DIM};
use crate::sim::{conjugacy_check, ControlSignal, MetricField, SimError, DEFAULT_HORIZON, DEFAULT_STEP};
use crate::systems::{observability_rank, s0_closure, ControlSystem, FieldMember};

/// Central-difference step for derivatives of a numeric candidate.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RealizationError {
    #[error("S_0 not full rank: rank {min_rank} < {dim} at {witness:?}")]
    RankDeficient {
        min_rank: usize,
        dim: usize,
        witness: Vec<f64>,
    },
    #[error("basis matrix K is singular at {point:?}")]
    SingularBasis { point: Vec<f64> },
    #[error("candidate metric is singular at {point:?}")]
    SingularCandidate { point: Vec<f64> },
    #[error("Jacobian of the map is singular at {point:?}")]
    SingularJacobian { point: Vec<f64> },
    #[error("expected {expected} components, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn at_point(p: &[f64]) -> impl FnOnce(EvalError) -> RealizationError + '_ {
    move |source| {
        SampleError {
            point: p.to_vec(),
            source,
        }
        .into()
    }
}

fn eval_matrix(m: &[Vec<Expr>], p: &[f64]) -> Result<DMatrix<f64>, RealizationError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut out = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = m[r][c].eval(p).map_err(at_point(p))?;
        }
    }
    Ok(out)
}

/// `G` solving `G^T K = D` pointwise, where `K`'s columns are `R_i` and `D`'s are `dV_{R_i}`.
#[derive(Debug, Clone)]
pub struct NumericCandidate {
    k: Vec<Vec<Expr>>,
    d: Vec<Vec<Expr>>,
}

impl NumericCandidate {
    fn solve(&self, p: &[f64]) -> Result<DMatrix<f64>, RealizationError> {
        let k = eval_matrix(&self.k, p)?;
        let d = eval_matrix(&self.d, p)?;
        // G = K^{-T} D^T
        k.transpose()
            .lu()
            .solve(&d.transpose())
            .filter(|g| g.iter().all(|v| v.is_finite()))
            .ok_or_else(|| RealizationError::SingularBasis { point: p.to_vec() })
    }
}

#[derive(Debug, Clone)]
pub enum CandidateMetric {
    Symbolic(Metric),
    Numeric(NumericCandidate),
}

impl CandidateMetric {
    pub fn dim(&self) -> usize {
        match self {
            CandidateMetric::Symbolic(g) => g.dim(),
            CandidateMetric::Numeric(c) => c.k.len(),
        }
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self, CandidateMetric::Symbolic(_))
    }

    pub fn at(&self, p: &[f64]) -> Result<DMatrix<f64>, RealizationError> {
        match self {
            CandidateMetric::Symbolic(g) => g.eval(p).map_err(at_point(p)),
            CandidateMetric::Numeric(c) => c.solve(p),
        }
    }

    /// `dG/dx^c` for every `c`: exact for symbolic candidates, central differences otherwise.
    pub fn partials_at(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>, RealizationError> {
        match self {
            CandidateMetric::Symbolic(g) => g.eval_partials(p).map_err(at_point(p)),
            CandidateMetric::Numeric(c) => (0..p.len())
                .map(|i| {
                    let mut plus = p.to_vec();
                    let mut minus = p.to_vec();
                    plus[i] += FD_STEP;
                    minus[i] -= FD_STEP;
                    Ok((c.solve(&plus)? - c.solve(&minus)?) / (2.0 * FD_STEP))
                })
                .collect(),
        }
    }
}

impl MetricField for CandidateMetric {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>, String> {
        self.at(x).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Symbolic when `n <= 6` and `det K` does not simplify to zero.
    Auto,
    Numeric,
}

/// Candidate metric from basis pairs `(R_i, V_{R_i})`.
pub fn reconstruct_from_basis(
    basis: &[&FieldMember],
    n: usize,
    points: &[Vec<f64>],
    mode: ReconstructionMode,
) -> Result<CandidateMetric, RealizationError> {
    if basis.len() != n {
        return Err(RealizationError::Dimension {
            expected: n,
            got: basis.len(),
        });
    }
    let k: Vec<Vec<Expr>> = (0..n)
        .map(|a| basis.iter().map(|m| m.field.component(a).clone()).collect())
        .collect();
    let grads: Vec<Vec<Expr>> = basis.iter().map(|m| m.function.gradient(n)).collect();
    let d: Vec<Vec<Expr>> = (0..n)
        .map(|a| (0..n).map(|i| grads[i][a].clone()).collect())
        .collect();
    let numeric = NumericCandidate { k, d };
    for p in points {
        numeric.solve(p)?;
    }
    if mode == ReconstructionMode::Numeric || n > SYMBOLIC_MAX_DIM {
        return Ok(CandidateMetric::Numeric(numeric));
    }
    let Some((kinv, det)) = symbolic_inverse(&numeric.k) else {
        return Ok(CandidateMetric::Numeric(numeric));
    };
    if points.iter().any(|p| det.eval(p).map_or(true, |v| v == 0.0)) {
        return Ok(CandidateMetric::Numeric(numeric));
    }
    // G_ab = sum_i (K^{-1})_ia D_bi
    let comps: Vec<Vec<Expr>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    Expr::sum((0..n).map(|i| Expr::product([kinv[i][a].clone(), numeric.d[b][i].clone()])))
                        .simplify()
                })
                .collect()
        })
        .collect();
    let g = Metric::new(comps)?;
    // guard against cancellation in the symbolic route
    for p in points {
        let num = numeric.solve(p)?;
        match g.eval(p) {
            Ok(m) if (&m - &num).amax() <= 1e-8 * (1.0 + num.amax()) => {}
            _ => return Ok(CandidateMetric::Numeric(numeric)),
        }
    }
    Ok(CandidateMetric::Symbolic(g))
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub candidate: CandidateMetric,
    pub basis: Vec<String>,
}

pub fn reconstruct_metric(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    mode: ReconstructionMode,
) -> Result<Reconstruction, RealizationError> {
    let fam = s0_closure(s, conn, depth, points, tol, RANK_TOL)?;
    if !fam.rank.full || fam.basis.len() != s.dim() {
        return Err(RealizationError::RankDeficient {
            min_rank: fam.rank.min_rank,
            dim: s.dim(),
            witness: fam.rank.witness.clone(),
        });
    }
    let basis = fam.basis_members();
    Ok(Reconstruction {
        candidate: reconstruct_from_basis(&basis, s.dim(), points, mode)?,
        basis: basis.iter().map(|m| m.word.label()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    /// Scale used for thresholding: the check passes iff `value <= tol * (1 + scale)`.
    pub scale: f64,
    pub witness: Vec<f64>,
}

impl Residual {
    fn new() -> Self {
        Residual {
            value: 0.0,
            scale: 0.0,
            witness: vec![],
        }
    }

    fn update(&mut self, value: f64, scale: f64, point: &[f64]) {
        if value > self.value || value.is_nan() || self.witness.is_empty() {
            self.value = value;
            self.witness = point.to_vec();
        }
        self.scale = self.scale.max(scale);
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.value <= tol * (1.0 + self.scale)
    }
}

/// `max |G_ab - G_ba|`.
pub fn verify_symmetry(g: &CandidateMetric, points: &[Vec<f64>]) -> Result<Residual, RealizationError> {
    let mut r = Residual::new();
    for p in points {
        let m = g.at(p)?;
        r.update((&m - m.transpose()).amax(), m.amax(), p);
    }
    Ok(r)
}

/// `max |Gamma(conn) - Gamma(LC of g)|`.
pub fn verify_levi_civita(
    g: &CandidateMetric,
    conn: &Connection,
    points: &[Vec<f64>],
) -> Result<Residual, RealizationError> {
    let mut r = Residual::new();
    for p in points {
        let lc = christoffel_numeric(&g.at(p)?, &g.partials_at(p)?)
            .ok_or_else(|| RealizationError::SingularCandidate { point: p.clone() })?;
        let given = conn.eval(p).map_err(at_point(p))?;
        let diff = lc.iter().zip(&given).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.update(diff, given.iter().fold(0.0f64, |m, v| m.max(v.abs())), p);
    }
    Ok(r)
}

/// Per input, `max |flat_G(g_j) - dV_j|`.
pub fn verify_input_gradients(
    s: &ControlSystem,
    g: &CandidateMetric,
    points: &[Vec<f64>],
) -> Result<Vec<Residual>, RealizationError> {
    let n = s.dim();
    let grads: Vec<Vec<Expr>> = s.outputs().iter().map(|v| v.gradient(n)).collect();
    let mut out = vec![Residual::new(); s.input_count()];
    for p in points {
        let m = g.at(p)?;
        for (j, (gj, dv)) in s.inputs().iter().zip(&grads).enumerate() {
            let flat = &m * DVector::from_vec(gj.eval(p).map_err(at_point(p))?);
            let dv = DVector::from_vec(Expr::eval_all(dv, p).map_err(at_point(p))?);
            out[j].update((&flat - &dv).amax(), dv.amax(), p);
        }
    }
    Ok(out)
}

/// Curl of `flat_G(g_0)`, from `d_b (G_ac g0^c) = (d_b G)_ac g0^c + G_ac d_b g0^c`.
pub fn verify_drift_locally_gradient(
    s: &ControlSystem,
    g: &CandidateMetric,
    points: &[Vec<f64>],
) -> Result<Residual, RealizationError> {
    let n = s.dim();
    let jac: Vec<Expr> = s.drift().jacobian().into_iter().flatten().collect();
    let mut r = Residual::new();
    for p in points {
        let g0 = DVector::from_vec(s.drift().eval(p).map_err(at_point(p))?);
        let j = DMatrix::from_row_slice(n, n, &Expr::eval_all(&jac, p).map_err(at_point(p))?);
        let m = g.at(p)?;
        let dg = g.partials_at(p)?;
        // dw[(a, b)] = d_b w_a
        let mut dw = &m * &j;
        for (b, dgb) in dg.iter().enumerate() {
            let col = dgb * &g0;
            for a in 0..n {
                dw[(a, b)] += col[a];
            }
        }
        r.update((&dw - dw.transpose()).amax(), 0.0, p);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Pointwise identities.
    pub identity: f64,
    /// Simulation conjugacy.
    pub simulation: f64,
    /// Relative singular-value threshold.
    pub rank: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-8,
            simulation: 1e-6,
            rank: RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeOptions {
    pub depth: usize,
    pub samples: usize,
    pub seed: u64,
    pub tol: Tolerances,
    pub step: f64,
    pub horizon: f64,
    pub mode: ReconstructionMode,
    pub simulate: bool,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        CharacterizeOptions {
            depth: 3,
            samples: 64,
            seed: crate::expr::DEFAULT_SEED,
            tol: Tolerances::default(),
            step: DEFAULT_STEP,
            horizon: DEFAULT_HORIZON,
            mode: ReconstructionMode::Auto,
            simulate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Passed,
    Failed,
    Warning,
    Skipped,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub name: &'static str,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    pub detail: String,
}

impl StageReport {
    fn new(name: &'static str, status: StageStatus, detail: impl Into<String>) -> Self {
        StageReport {
            name,
            status,
            residual: None,
            witness: None,
            detail: detail.into(),
        }
    }

    fn with_residual(mut self, value: f64, witness: Vec<f64>) -> Self {
        self.residual = Some(value);
        self.witness = Some(witness);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    LocallyGradient,
    NotGradient { stage: String, witness: Vec<f64> },
    Inconclusive { stage: String, reason: String },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::LocallyGradient => "locally-gradient",
            Verdict::NotGradient { .. } => "not-gradient",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::LocallyGradient => 0,
            Verdict::NotGradient { .. } => 1,
            Verdict::Inconclusive { .. } => 2,
        }
    }
}

/// Stages whose failure refutes a gradient realization for the given connection.
const FALSIFYING: [&str; 6] = [
    "compatibility",
    "symmetry",
    "levi_civita",
    "input_gradients",
    "drift_closed",
    "conjugacy",
];

#[derive(Debug, Clone)]
pub struct RealizationReport {
    pub options: CharacterizeOptions,
    pub stages: Vec<StageReport>,
    pub basis: Vec<String>,
    pub candidate: Option<CandidateMetric>,
    pub verdict: Verdict,
    pub elapsed: Duration,
}

impl RealizationReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn decide(stages: &[StageReport]) -> Verdict {
    for s in stages {
        if s.status == StageStatus::Failed && FALSIFYING.contains(&s.name) {
            return Verdict::NotGradient {
                stage: s.name.to_string(),
                witness: s.witness.clone().unwrap_or_default(),
            };
        }
    }
    for s in stages {
        if matches!(s.status, StageStatus::Failed | StageStatus::Error | StageStatus::Skipped) {
            return Verdict::Inconclusive {
                stage: s.name.to_string(),
                reason: s.detail.clone(),
            };
        }
    }
    Verdict::LocallyGradient
}

fn residual_stage(name: &'static str, r: Result<Residual, RealizationError>, tol: f64) -> StageReport {
    match r {
        Ok(r) => {
            let status = if r.passes(tol) {
                StageStatus::Passed
            } else {
                StageStatus::Failed
            };
            StageReport::new(name, status, format!("tolerance {tol:e} relative to scale {:.3e}", r.scale))
                .with_residual(r.value, r.witness)
        }
        Err(e) => StageReport::new(name, StageStatus::Error, e.to_string()),
    }
}

/// Seeded `(x0, v0)`: `x0` in the chart box shrunk by half, `v0` in `[-0.5, 0.5]^n`.
pub fn default_initial_condition(s: &ControlSystem, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x0 = sample_box(&s.chart().scaled_bounds(0.5), 1, &mut rng).remove(0);
    let v0 = (0..s.dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    (x0, v0)
}

/// Seeded base and prolonged input signals for a conjugacy run.
pub fn default_signals(m: usize, horizon: f64, seed: u64) -> (ControlSignal, ControlSignal) {
    (
        ControlSignal::random(m, horizon, seed.wrapping_add(2)),
        ControlSignal::random(m, horizon, seed.wrapping_add(3)),
    )
}

fn conjugacy_stage(
    s: &ControlSystem,
    g: &CandidateMetric,
    conn: &Connection,
    opts: &CharacterizeOptions,
) -> StageReport {
    let (x0, v0) = default_initial_condition(s, opts.seed);
    let mut horizon = opts.horizon;
    loop {
        let (u, up) = default_signals(s.input_count(), horizon, opts.seed);
        match conjugacy_check(s, g, conn, &x0, &v0, &u, &up, opts.step, horizon) {
            Ok(r) => {
                let status = if r.residual <= opts.tol.simulation {
                    StageStatus::Passed
                } else {
                    StageStatus::Failed
                };
                let mut witness = x0.clone();
                witness.extend(&v0);
                return StageReport::new(
                    "conjugacy",
                    status,
                    format!(
                        "flat-map conjugacy of prolongation and gradient extension, T = {horizon}, h = {}, t* = {}",
                        opts.step, r.witness_time
                    ),
                )
                .with_residual(r.residual, witness);
            }
            Err(SimError::Guard { .. }) if horizon / 2.0 >= opts.step * 4.0 => {
                horizon /= 2.0;
                horizon = (horizon / opts.step).round() * opts.step;
            }
            Err(e) => return StageReport::new("conjugacy", StageStatus::Error, e.to_string()),
        }
    }
}

/// Runs every stage in order; errors are recorded in the report.
pub fn characterize(s: &ControlSystem, conn: &Connection, opts: &CharacterizeOptions) -> RealizationReport {
    let start = Instant::now();
    let points = s.chart().sample_points(opts.samples, opts.seed);
    let tol = opts.tol.identity;
    let mut stages = Vec::new();

    stages.push(match observability_rank(s, opts.depth, &points, tol, opts.tol.rank) {
        Ok(r) => {
            let status = if !r.full {
                StageStatus::Failed
            } else if !r.constant {
                StageStatus::Warning
            } else {
                StageStatus::Passed
            };
            StageReport::new(
                "observability",
                status,
                format!("rank of dH up to depth {} is {}..{} of {}", opts.depth, r.min_rank, r.max_rank, r.dim),
            )
            .with_residual((r.dim - r.min_rank) as f64, r.witness)
        }
        Err(e) => StageReport::new("observability", StageStatus::Error, e.to_string()),
    });

    let fam = s0_closure(s, conn, opts.depth, &points, tol, opts.tol.rank);
    let full = matches!(&fam, Ok(f) if f.rank.full && f.basis.len() == s.dim());
    let mut basis_labels = Vec::new();
    stages.push(match &fam {
        Ok(f) => {
            basis_labels = f.basis_members().iter().map(|m| m.word.label()).collect();
            let status = if full {
                StageStatus::Passed
            } else {
                StageStatus::Failed
            };
            StageReport::new(
                "s0_rank",
                status,
                format!("S_0 rank up to depth {} is {}..{} of {}", opts.depth, f.rank.min_rank, f.rank.max_rank, f.rank.dim),
            )
            .with_residual((f.rank.dim - f.rank.min_rank) as f64, f.rank.witness.clone())
        }
        Err(e) => StageReport::new("s0_rank", StageStatus::Error, e.to_string()),
    });

    stages.push(if full {
        match check_compatibility_on_basis(s, conn, opts.depth, &points, tol, opts.tol.rank) {
            Ok(c) => {
                let worst = if c.a.max_residual >= c.b.max_residual { &c.a } else { &c.b };
                let status = if c.holds() {
                    StageStatus::Passed
                } else {
                    StageStatus::Failed
                };
                let identity = worst.worst.as_ref().map_or(String::new(), |w| w.identity.clone());
                StageReport::new("compatibility", status, format!("basis check; worst identity {identity}"))
                    .with_residual(
                        worst.max_residual,
                        worst.worst.as_ref().map_or(vec![], |w| w.point.clone()),
                    )
            }
            Err(CompatError::RankDeficient { .. }) => unreachable!("rank checked above"),
            Err(e) => StageReport::new("compatibility", StageStatus::Error, e.to_string()),
        }
    } else {
        let a = check_condition_a(s, conn, DEFAULT_DEPTH_A, &points, tol);
        let b = check_condition_b(s, conn, DEFAULT_DEPTH_B, &points, tol);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let worst = if a.max_residual >= b.max_residual { a } else { b };
                let status = if worst.holds {
                    StageStatus::Skipped
                } else {
                    StageStatus::Failed
                };
                StageReport::new(
                    "compatibility",
                    status,
                    format!(
                        "S_0 not full rank; direct check at depths {DEFAULT_DEPTH_A}/{DEFAULT_DEPTH_B} {}",
                        if worst.holds { "found no violation" } else { "found a violation" }
                    ),
                )
                .with_residual(
                    worst.max_residual,
                    worst.worst.map_or(vec![], |w| w.point),
                )
            }
            (Err(e), _) | (_, Err(e)) => StageReport::new("compatibility", StageStatus::Error, e.to_string()),
        }
    });

    let candidate = match &fam {
        Ok(f) if full => {
            match reconstruct_from_basis(&f.basis_members(), s.dim(), &points, opts.mode) {
                Ok(c) => {
                    stages.push(StageReport::new(
                        "reconstruction",
                        StageStatus::Passed,
                        if c.is_symbolic() { "symbolic candidate" } else { "numeric candidate" },
                    ));
                    Some(c)
                }
                Err(e) => {
                    let witness = match &e {
                        RealizationError::SingularBasis { point } => Some(point.clone()),
                        _ => None,
                    };
                    let mut st = StageReport::new("reconstruction", StageStatus::Error, e.to_string());
                    st.witness = witness;
                    stages.push(st);
                    None
                }
            }
        }
        _ => {
            stages.push(StageReport::new("reconstruction", StageStatus::Skipped, "S_0 basis unavailable"));
            None
        }
    };

    match &candidate {
        Some(g) => {
            stages.push(residual_stage("symmetry", verify_symmetry(g, &points), tol));
            stages.push(residual_stage("levi_civita", verify_levi_civita(g, conn, &points), tol));
            stages.push(match verify_input_gradients(s, g, &points) {
                Ok(rs) => {
                    let worst = rs
                        .into_iter()
                        .enumerate()
                        .max_by(|a, b| a.1.value.total_cmp(&b.1.value));
                    match worst {
                        Some((j, r)) => {
                            let mut st = residual_stage("input_gradients", Ok(r), tol);
                            st.detail = format!("worst input {}; {}", j + 1, st.detail);
                            st
                        }
                        None => StageReport::new("input_gradients", StageStatus::Passed, "no inputs"),
                    }
                }
                Err(e) => StageReport::new("input_gradients", StageStatus::Error, e.to_string()),
            });
            stages.push(residual_stage("drift_closed", verify_drift_locally_gradient(s, g, &points), tol));
            stages.push(if opts.simulate {
                conjugacy_stage(s, g, conn, opts)
            } else {
                StageReport::new("conjugacy", StageStatus::Skipped, "simulation disabled")
            });
        }
        None => {
            for name in ["symmetry", "levi_civita", "input_gradients", "drift_closed", "conjugacy"] {
                stages.push(StageReport::new(name, StageStatus::Skipped, "no candidate metric"));
            }
        }
    }

    RealizationReport {
        verdict: decide(&stages),
        options: opts.clone(),
        stages,
        basis: basis_labels,
        candidate,
        elapsed: start.elapsed(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryReport {
    pub is_isometry: bool,
    /// `max |J^T G2(psi) J - G1|`.
    pub residual: f64,
    pub witness: Vec<f64>,
    pub respects_connections: bool,
    /// Pushforward of the Levi-Civita connections on a random field pair.
    pub connection_residual: f64,
}

fn psi_jets(psi: &[Expr], n: usize) -> (Vec<Expr>, Vec<Expr>) {
    let jac: Vec<Expr> = psi.iter().flat_map(|f| f.gradient(n)).collect();
    let hess: Vec<Expr> = jac.iter().flat_map(|f| f.gradient(n)).collect();
    (jac, hess)
}

fn jacobian_at(jac: &[Expr], n: usize, x: &[f64]) -> Result<DMatrix<f64>, RealizationError> {
    let j = DMatrix::from_row_slice(n, n, &Expr::eval_all(jac, x).map_err(at_point(x))?);
    if j.determinant().abs() < 1e-12 {
        return Err(RealizationError::SingularJacobian { point: x.to_vec() });
    }
    Ok(j)
}

fn check_psi(g1: &Metric, g2: &Metric, psi: &[Expr]) -> Result<usize, RealizationError> {
    let n = g1.dim();
    for got in [g2.dim(), psi.len()] {
        if got != n {
            return Err(RealizationError::Dimension { expected: n, got });
        }
    }
    Ok(n)
}

/// `max |J^T G2(psi(x)) J - G1(x)|` at one point.
pub fn isometry_residual_at(g1: &Metric, g2: &Metric, psi: &[Expr], x: &[f64]) -> Result<f64, RealizationError> {
    let n = check_psi(g1, g2, psi)?;
    let (jac, _) = psi_jets(psi, n);
    let j = jacobian_at(&jac, n, x)?;
    let y = Expr::eval_all(psi, x).map_err(at_point(x))?;
    let pulled = j.transpose() * g2.eval(&y).map_err(at_point(&y))? * &j;
    Ok((pulled - g1.eval(x).map_err(at_point(x))?).amax())
}

fn random_affine_field(n: usize, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::new(
        (0..n)
            .map(|_| {
                let mut terms = vec![Expr::constant(rng.gen_range(-1.0..1.0))];
                terms.extend((0..n).map(|b| Expr::scale(rng.gen_range(-1.0..1.0), Expr::var(b))));
                Expr::sum(terms).simplify()
            })
            .collect(),
    )
}

fn christoffel_at(g: &Metric, x: &[f64]) -> Result<Vec<f64>, RealizationError> {
    let m = g.eval(x).map_err(at_point(x))?;
    let dm = g.eval_partials(x).map_err(at_point(x))?;
    christoffel_numeric(&m, &dm).ok_or_else(|| RealizationError::SingularCandidate { point: x.to_vec() })
}

fn contract(gamma: &[f64], n: usize, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(n, |a, _| {
        let mut s = 0.0;
        for b in 0..n {
            for c in 0..n {
                s += gamma[a * n * n + b * n + c] * x[b] * y[c];
            }
        }
        s
    })
}

/// Tests whether `psi` pulls `g2` back to `g1`, and whether it maps the
/// Levi-Civita connection of `g1` to that of `g2` on a seeded random field pair.
pub fn isometry_check(
    g1: &Metric,
    g2: &Metric,
    psi: &[Expr],
    points: &[Vec<f64>],
    tol: f64,
    seed: u64,
) -> Result<IsometryReport, RealizationError> {
    let n = check_psi(g1, g2, psi)?;
    let (jac, hess) = psi_jets(psi, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xf = random_affine_field(n, &mut rng);
    let yf = random_affine_field(n, &mut rng);
    let yjac: Vec<Expr> = yf.jacobian().into_iter().flatten().collect();
    let mut report = IsometryReport {
        is_isometry: true,
        residual: 0.0,
        witness: points.first().cloned().unwrap_or_default(),
        respects_connections: true,
        connection_residual: 0.0,
    };
    for x in points {
        let j = jacobian_at(&jac, n, x)?;
        let y = Expr::eval_all(psi, x).map_err(at_point(x))?;
        let pulled = j.transpose() * g2.eval(&y).map_err(at_point(&y))? * &j;
        let r = (pulled - g1.eval(x).map_err(at_point(x))?).amax();
        if r > report.residual {
            report.residual = r;
            report.witness = x.clone();
        }
        // psi_*(nabla1_X Y) vs nabla2_{psi_* X}(psi_* Y), both at psi(x)
        let xv = DVector::from_vec(xf.eval(x).map_err(at_point(x))?);
        let yv = DVector::from_vec(yf.eval(x).map_err(at_point(x))?);
        let dy = DMatrix::from_row_slice(n, n, &Expr::eval_all(&yjac, x).map_err(at_point(x))?);
        let h = Expr::eval_all(&hess, x).map_err(at_point(x))?;
        let hxy = DVector::from_fn(n, |a, _| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    s += h[a * n * n + b * n + c] * xv[b] * yv[c];
                }
            }
            s
        });
        let g1x = christoffel_at(g1, x)?;
        let g2y = christoffel_at(g2, &y)?;
        let lhs = &j * (&dy * &xv + contract(&g1x, n, &xv, &yv));
        let rhs = hxy + &j * (&dy * &xv) + contract(&g2y, n, &(&j * &xv), &(&j * &yv));
        report.connection_residual = report.connection_residual.max((lhs - rhs).amax());
    }
    report.is_isometry = report.residual <= tol;
    report.respects_connections = report.connection_residual <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Chart;

    fn line_system(drift: &str) -> ControlSystem {
        let c = Chart::with_names(&["x"]).unwrap();
        ControlSystem::new(
            c.clone(),
            VectorField::parse(&c, &[drift]).unwrap(),
            vec![VectorField::coordinate(1, 0)],
            vec![c.parse("x").unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn euclidean_plane_recovers_identity() {
        let c = Chart::standard(2);
        let s = ControlSystem::gradient_system(
            c.clone(),
            &Metric::euclidean(2),
            VectorField::zero(2),
            vec![c.parse("x1").unwrap(), c.parse("x2").unwrap()],
        )
        .unwrap();
        let pts = c.sample_points(16, 1);
        let rec = reconstruct_metric(&s, &Connection::flat(2), 1, &pts, 1e-8, ReconstructionMode::Auto).unwrap();
        let g = &rec.candidate;
        assert!(g.is_symbolic());
        for p in &pts {
            assert!((g.at(p).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-14);
        }
        assert_eq!(verify_levi_civita(g, &Connection::flat(2), &pts).unwrap().value, 0.0);
    }

    #[test]
    fn symmetry_residual_reports_injected_asymmetry() {
        let c = Chart::standard(2);
        let g = Metric::parse(&c, &[vec!["1", "0.25"], vec!["0", "1"]]).unwrap();
        let r = verify_symmetry(&CandidateMetric::Symbolic(g), &c.sample_points(4, 1)).unwrap();
        assert_eq!(r.value, 0.25);
        let one = Metric::parse(&Chart::standard(1), &[vec!["exp(x1)"]]).unwrap();
        let r = verify_symmetry(&CandidateMetric::Symbolic(one), &[vec![0.3]]).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn rotational_drift_is_not_closed() {
        let c = Chart::standard(2);
        let s = ControlSystem::new(
            c.clone(),
            VectorField::parse(&c, &["x2", "0"]).unwrap(),
            vec![],
            vec![],
        )
        .unwrap();
        let g = CandidateMetric::Symbolic(Metric::euclidean(2));
        let r = verify_drift_locally_gradient(&s, &g, &c.sample_points(8, 2)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_drift_on_the_line() {
        let s = line_system("x^2");
        let opts = CharacterizeOptions {
            samples: 16,
            ..Default::default()
        };
        let report = characterize(&s, &Connection::flat(1), &opts);
        assert_eq!(report.verdict, Verdict::LocallyGradient, "{:#?}", report.stages);
        let g = report.candidate.unwrap();
        assert!((g.at(&[0.4]).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn numeric_candidate_matches_symbolic() {
        let c = Chart::standard(2);
        let metric = Metric::parse(&c, &[vec!["1", "0"], vec!["0", "exp(x1)"]]).unwrap();
        let s = ControlSystem::gradient_system(
            c.clone(),
            &metric,
            VectorField::zero(2),
            vec![c.parse("x1").unwrap(), c.parse("x2 + x1^2").unwrap()],
        )
        .unwrap();
        let conn = crate::geometry::christoffel_from_metric(&metric).unwrap();
        let pts = c.sample_points(12, 5);
        let sym = reconstruct_metric(&s, &conn, 2, &pts, 1e-8, ReconstructionMode::Auto).unwrap();
        let num = reconstruct_metric(&s, &conn, 2, &pts, 1e-8, ReconstructionMode::Numeric).unwrap();
        assert!(!num.candidate.is_symbolic());
        for p in &pts {
            let a = sym.candidate.at(p).unwrap();
            let b = num.candidate.at(p).unwrap();
            assert!((&a - &b).amax() < 1e-12);
            assert!((a - metric.eval(p).unwrap()).amax() < 1e-12);
        }
        let lc = verify_levi_civita(&num.candidate, &conn, &pts).unwrap();
        assert!(lc.value < 1e-8, "{}", lc.value);
    }

    #[test]
    fn isometries_on_the_line() {
        let c = Chart::standard(1);
        let g1 = Metric::euclidean(1);
        let g2 = Metric::diagonal(vec![Expr::constant(0.25)]);
        let psi = vec![c.parse("2*x1").unwrap()];
        let r = isometry_check(&g1, &g2, &psi, &c.sample_points(8, 1), 1e-12, 7).unwrap();
        assert!(r.is_isometry && r.respects_connections);
        let id = vec![Expr::var(0)];
        let r = isometry_check(&g1, &g1, &id, &c.sample_points(8, 1), 1e-12, 7).unwrap();
        assert_eq!(r.residual, 0.0);
        let collapse = vec![Expr::zero()];
        assert!(matches!(
            isometry_check(&g1, &g1, &collapse, &[vec![0.0]], 1e-12, 7),
            Err(RealizationError::SingularJacobian { .. })
        ));
    }
}
