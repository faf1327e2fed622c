//! Affine control systems, their prolongation and gradient extension, and the
//! truncated observation spaces and symmetric-product closures built from them.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{compare_on_points, Chart, ChartError, Expr, SampleError};
use crate::geometry::{
    gradient, lie_derivative, symmetric_product, Connection, GeometryError, Metric, VectorField,
};
use crate::lifts::{
    complete_lift_fn, complete_lift_vf, cotangent_chart, cotangent_gradient, tangent_chart,
    vertical_lift_fn, vertical_lift_vf, CotangentFunction, LiftError,
};
use crate::linalg::{columns, numeric_rank};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("{inputs} input fields but {outputs} outputs")]
    InputOutputMismatch { inputs: usize, outputs: usize },
    #[error("{what} has {got} components on a {expected}-dimensional chart")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{what} refers to coordinate index {index} outside the chart")]
    OutOfChart { what: String, index: usize },
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// `x' = g0 + u_j g_j`, `y_j = V_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    chart: Chart,
    drift: VectorField,
    inputs: Vec<VectorField>,
    outputs: Vec<Expr>,
}

fn check_in_chart(e: &Expr, n: usize, what: &str) -> Result<(), SystemError> {
    match e.max_var() {
        Some(i) if i >= n => Err(SystemError::OutOfChart {
            what: what.to_string(),
            index: i,
        }),
        _ => Ok(()),
    }
}

fn check_field(f: &VectorField, n: usize, what: &str) -> Result<(), SystemError> {
    if f.dim() != n {
        return Err(SystemError::Dimension {
            what: what.to_string(),
            expected: n,
            got: f.dim(),
        });
    }
    f.comps().iter().try_for_each(|c| check_in_chart(c, n, what))
}

impl ControlSystem {
    pub fn new(
        chart: Chart,
        drift: VectorField,
        inputs: Vec<VectorField>,
        outputs: Vec<Expr>,
    ) -> Result<Self, SystemError> {
        let n = chart.dim();
        if inputs.len() != outputs.len() {
            return Err(SystemError::InputOutputMismatch {
                inputs: inputs.len(),
                outputs: outputs.len(),
            });
        }
        check_field(&drift, n, "drift")?;
        for (j, g) in inputs.iter().enumerate() {
            check_field(g, n, &format!("input {}", j + 1))?;
        }
        for (j, v) in outputs.iter().enumerate() {
            check_in_chart(v, n, &format!("output {}", j + 1))?;
        }
        Ok(ControlSystem {
            chart,
            drift,
            inputs,
            outputs,
        })
    }

    /// Inputs `grad_G V_j` and outputs `V_j`.
    pub fn gradient_system(
        chart: Chart,
        metric: &Metric,
        drift: VectorField,
        potentials: Vec<Expr>,
    ) -> Result<Self, SystemError> {
        let inputs = potentials
            .iter()
            .map(|v| gradient(metric, v))
            .collect::<Result<Vec<_>, _>>()?;
        ControlSystem::new(chart, drift, inputs, potentials)
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn inputs(&self) -> &[VectorField] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Expr] {
        &self.outputs
    }

    /// `g_0, g_1, ..., g_m`.
    pub fn vocabulary(&self) -> Vec<VectorField> {
        std::iter::once(self.drift.clone())
            .chain(self.inputs.iter().cloned())
            .collect()
    }

    pub fn with_chart(&self, chart: Chart) -> Result<Self, SystemError> {
        if chart.dim() != self.dim() {
            return Err(SystemError::Dimension {
                what: "chart".into(),
                expected: self.dim(),
                got: chart.dim(),
            });
        }
        Ok(ControlSystem {
            chart,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKind {
    Prolonged,
    Extension,
}

/// System on a `2n` chart with `2m` inputs and outputs.
///
/// Inputs are ordered `(u, u^p)` or `(u, u^e)`; outputs `(y, y^v)` or `(y, y^a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub kind: LiftKind,
    pub system: ControlSystem,
    pub base: ControlSystem,
}

pub fn prolong(s: &ControlSystem) -> Result<LiftedSystem, SystemError> {
    let n = s.dim();
    let inputs = s
        .inputs
        .iter()
        .map(complete_lift_vf)
        .chain(s.inputs.iter().map(vertical_lift_vf))
        .collect();
    let outputs = s
        .outputs
        .iter()
        .map(vertical_lift_fn)
        .chain(s.outputs.iter().map(|v| complete_lift_fn(v, n)))
        .collect();
    let system = ControlSystem::new(
        tangent_chart(&s.chart)?,
        complete_lift_vf(&s.drift),
        inputs,
        outputs,
    )?;
    Ok(LiftedSystem {
        kind: LiftKind::Prolonged,
        system,
        base: s.clone(),
    })
}

pub fn gradient_extension(s: &ControlSystem, conn: &Connection) -> Result<LiftedSystem, SystemError> {
    let grad_momentum = |x: &VectorField| cotangent_gradient(conn, &CotangentFunction::Momentum(x.clone()));
    let drift = grad_momentum(&s.drift)?;
    let mut inputs = s
        .inputs
        .iter()
        .map(grad_momentum)
        .collect::<Result<Vec<_>, _>>()?;
    for v in &s.outputs {
        inputs.push(cotangent_gradient(conn, &CotangentFunction::Vertical(v.clone()))?);
    }
    let outputs = s
        .outputs
        .iter()
        .map(vertical_lift_fn)
        .chain(s.inputs.iter().map(crate::lifts::momentum_fn))
        .collect();
    let system = ControlSystem::new(cotangent_chart(&s.chart)?, drift, inputs, outputs)?;
    Ok(LiftedSystem {
        kind: LiftKind::Extension,
        system,
        base: s.clone(),
    })
}

/// `X_1 ... X_s` applied to output or input `terminal`; letters index `g_0..g_m`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    pub prefix: Vec<usize>,
    pub terminal: usize,
}

impl Word {
    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    /// Readable form such as `g2:g1:[2]`.
    pub fn label(&self) -> String {
        let mut s: String = self.prefix.iter().map(|i| format!("g{i}:")).collect();
        s.push_str(&format!("[{}]", self.terminal + 1));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionMember {
    pub word: Word,
    pub function: Expr,
}

/// Element of `S_0` with its paired function `V_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMember {
    pub word: Word,
    pub field: VectorField,
    pub function: Expr,
}

fn values_at(exprs: &[Expr], points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SampleError> {
    points
        .iter()
        .map(|p| {
            Expr::eval_all(exprs, p).map_err(|source| SampleError {
                point: p.clone(),
                source,
            })
        })
        .collect()
}

fn vanishes(e: &Expr, points: &[Vec<f64>], tol: f64) -> Result<bool, SampleError> {
    if e.is_zero() {
        return Ok(true);
    }
    Ok(compare_on_points(e, &Expr::zero(), points, tol)?.equivalent)
}

fn same(a: &Expr, b: &Expr, points: &[Vec<f64>], tol: f64) -> Result<bool, SampleError> {
    if a == b {
        return Ok(true);
    }
    Ok(compare_on_points(a, b, points, tol)?.equivalent)
}

fn same_field(a: &VectorField, b: &VectorField, points: &[Vec<f64>], tol: f64) -> Result<bool, SampleError> {
    for (x, y) in a.comps().iter().zip(b.comps()) {
        if !same(x, y, points, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn field_vanishes(a: &VectorField, points: &[Vec<f64>], tol: f64) -> Result<bool, SampleError> {
    for c in a.comps() {
        if !vanishes(c, points, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Truncated observation space: all `L_{X_1} ... L_{X_s} V_j` with `s <= depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpace {
    pub depth: usize,
    pub members: Vec<FunctionMember>,
}

impl ObservationSpace {
    pub fn functions(&self) -> Vec<Expr> {
        self.members.iter().map(|m| m.function.clone()).collect()
    }
}

/// Words are extended level by level; members that vanish or repeat an earlier
/// member on the sample points are dropped together with their descendants.
pub fn observation_space(
    s: &ControlSystem,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ObservationSpace, SampleError> {
    observation_space_until(s, depth, points, tol, |_| Ok(false))
}

fn observation_space_until(
    s: &ControlSystem,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    mut done: impl FnMut(&[FunctionMember]) -> Result<bool, SampleError>,
) -> Result<ObservationSpace, SampleError> {
    let vocab = s.vocabulary();
    let mut members: Vec<FunctionMember> = Vec::new();
    let mut level: Vec<FunctionMember> = Vec::new();
    for (j, v) in s.outputs.iter().enumerate() {
        level.push(FunctionMember {
            word: Word {
                prefix: vec![],
                terminal: j,
            },
            function: v.simplify(),
        });
    }
    for s_len in 0..=depth {
        let mut kept = Vec::new();
        for cand in level {
            if vanishes(&cand.function, points, tol)? {
                continue;
            }
            let mut dup = false;
            for m in members.iter().chain(kept.iter()) {
                if same(&cand.function, &m.function, points, tol)? {
                    dup = true;
                    break;
                }
            }
            if !dup {
                kept.push(cand);
            }
        }
        let kept_len = kept.len();
        members.extend(kept);
        if s_len == depth || done(&members)? {
            break;
        }
        let parents = &members[members.len() - kept_len..];
        let mut next = Vec::new();
        for (i, g) in vocab.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            for parent in parents {
                let mut prefix = vec![i];
                prefix.extend(parent.word.prefix.iter().copied());
                next.push(FunctionMember {
                    word: Word {
                        prefix,
                        terminal: parent.word.terminal,
                    },
                    function: lie_derivative(g, &parent.function),
                });
            }
        }
        level = next;
    }
    Ok(ObservationSpace { depth, members })
}

/// Numeric rank of `{d h(x)}` at each point.
pub fn differential_ranks(
    functions: &[Expr],
    n: usize,
    points: &[Vec<f64>],
    rank_tol: f64,
) -> Result<Vec<usize>, SampleError> {
    let grads: Vec<Expr> = functions.iter().flat_map(|f| f.gradient(n)).collect();
    let vals = values_at(&grads, points)?;
    Ok(vals
        .iter()
        .map(|v| {
            if functions.is_empty() {
                0
            } else {
                numeric_rank(&DMatrix::from_row_slice(functions.len(), n, v), rank_tol)
            }
        })
        .collect())
}

/// Numeric rank of the span of `fields` at each point.
pub fn field_ranks(
    fields: &[VectorField],
    points: &[Vec<f64>],
    rank_tol: f64,
) -> Result<Vec<usize>, SampleError> {
    let comps: Vec<Expr> = fields.iter().flat_map(|f| f.comps().iter().cloned()).collect();
    let n = fields.first().map_or(0, VectorField::dim);
    let vals = values_at(&comps, points)?;
    Ok(vals
        .iter()
        .map(|v| {
            let vecs: Vec<Vec<f64>> = v.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
            if fields.is_empty() {
                0
            } else {
                numeric_rank(&columns(&vecs, n), rank_tol)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub depth: usize,
    pub dim: usize,
    pub ranks: Vec<usize>,
    pub min_rank: usize,
    pub max_rank: usize,
    /// `true` iff the rank equals the dimension at every point.
    pub full: bool,
    /// `false` when the rank varies across the points.
    pub constant: bool,
    /// First point of minimal rank.
    pub witness: Vec<f64>,
}

impl RankReport {
    fn from_ranks(depth: usize, dim: usize, ranks: Vec<usize>, points: &[Vec<f64>]) -> Self {
        let min_rank = ranks.iter().copied().min().unwrap_or(0);
        let max_rank = ranks.iter().copied().max().unwrap_or(0);
        let witness = ranks
            .iter()
            .position(|&r| r == min_rank)
            .and_then(|i| points.get(i).cloned())
            .unwrap_or_default();
        RankReport {
            depth,
            dim,
            full: !ranks.is_empty() && min_rank == dim,
            constant: min_rank == max_rank,
            ranks,
            min_rank,
            max_rank,
            witness,
        }
    }
}

/// Local observability rank test: `dim span dH(x) == n` at every point.
pub fn observability_rank(
    s: &ControlSystem,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    rank_tol: f64,
) -> Result<RankReport, SampleError> {
    let n = s.dim();
    // full rank at every point cannot be lost by going deeper
    let space = observation_space_until(s, depth, points, tol, |members| {
        let fs: Vec<Expr> = members.iter().map(|m| m.function.clone()).collect();
        Ok(differential_ranks(&fs, n, points, rank_tol)?.iter().all(|&r| r == n))
    })?;
    let ranks = differential_ranks(&space.functions(), n, points, rank_tol)?;
    Ok(RankReport::from_ranks(depth, s.dim(), ranks, points))
}

/// Truncated `S_0` with a greedily extracted basis.
#[derive(Debug, Clone, PartialEq)]
pub struct S0Family {
    pub depth: usize,
    /// Deepest level generated; generation stops once the basis spans at every point.
    pub reached: usize,
    pub members: Vec<FieldMember>,
    /// Indices into `members`.
    pub basis: Vec<usize>,
    pub rank: RankReport,
}

impl S0Family {
    pub fn basis_members(&self) -> Vec<&FieldMember> {
        self.basis.iter().map(|&i| &self.members[i]).collect()
    }
}

/// All pairs `(<X_1 : ... <X_s : g_j>>, L_{X_1} ... L_{X_s} V_j)` with `s <= depth`.
///
/// A pair is dropped, with its descendants, when both parts vanish or both repeat
/// an earlier pair on the sample points.
pub fn word_pairs(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<FieldMember>, SampleError> {
    Ok(word_pairs_until(s, conn, depth, points, tol, |_| Ok(false))?.0)
}

/// Level-wise generation; stops early once `done` holds for the members so far.
/// Returns the members and the last generated level.
fn word_pairs_until(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    mut done: impl FnMut(&[FieldMember]) -> Result<bool, SampleError>,
) -> Result<(Vec<FieldMember>, usize), SampleError> {
    let vocab = s.vocabulary();
    let mut members: Vec<FieldMember> = Vec::new();
    let mut level: Vec<FieldMember> = s
        .inputs
        .iter()
        .zip(&s.outputs)
        .enumerate()
        .map(|(j, (g, v))| FieldMember {
            word: Word {
                prefix: vec![],
                terminal: j,
            },
            field: g.simplify(),
            function: v.simplify(),
        })
        .collect();
    for s_len in 0..=depth {
        let mut kept: Vec<FieldMember> = Vec::new();
        for cand in level {
            if field_vanishes(&cand.field, points, tol)? && vanishes(&cand.function, points, tol)? {
                continue;
            }
            let mut dup = false;
            for m in members.iter().chain(kept.iter()) {
                if same_field(&cand.field, &m.field, points, tol)?
                    && same(&cand.function, &m.function, points, tol)?
                {
                    dup = true;
                    break;
                }
            }
            if !dup {
                kept.push(cand);
            }
        }
        let kept_len = kept.len();
        members.extend(kept);
        if s_len == depth || done(&members)? {
            return Ok((members, s_len));
        }
        let parents = &members[members.len() - kept_len..];
        let mut next = Vec::new();
        for (i, g) in vocab.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            for parent in parents {
                let mut prefix = vec![i];
                prefix.extend(parent.word.prefix.iter().copied());
                next.push(FieldMember {
                    word: Word {
                        prefix,
                        terminal: parent.word.terminal,
                    },
                    field: symmetric_product(conn, g, &parent.field),
                    function: lie_derivative(g, &parent.function),
                });
            }
        }
        level = next;
    }
    unreachable!("the loop returns at s_len == depth")
}

/// Keeps a member iff it raises the numeric rank at a majority of points.
pub fn greedy_basis(
    members: &[FieldMember],
    dim: usize,
    points: &[Vec<f64>],
    rank_tol: f64,
) -> Result<Vec<usize>, SampleError> {
    let vals: Vec<Vec<Vec<f64>>> = members
        .iter()
        .map(|m| values_at(m.field.comps(), points))
        .collect::<Result<_, _>>()?;
    let mut basis: Vec<usize> = Vec::new();
    let mut current = vec![0usize; points.len()];
    for (i, v) in vals.iter().enumerate() {
        if basis.len() == dim {
            break;
        }
        let mut raised = 0;
        let mut next = current.clone();
        for (p, rank) in next.iter_mut().enumerate() {
            let mut cols: Vec<Vec<f64>> = basis.iter().map(|&b| vals[b][p].clone()).collect();
            cols.push(v[p].clone());
            let r = numeric_rank(&columns(&cols, dim), rank_tol);
            if r > *rank {
                raised += 1;
                *rank = r;
            }
        }
        if 2 * raised > points.len() {
            basis.push(i);
            current = next;
        }
    }
    Ok(basis)
}

pub fn s0_closure(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    rank_tol: f64,
) -> Result<S0Family, SampleError> {
    let n = s.dim();
    // the greedy basis only depends on a prefix of the members, so deeper
    // levels are not generated once it spans at every point
    let (members, reached) = word_pairs_until(s, conn, depth, points, tol, |members| {
        let basis = greedy_basis(members, n, points, rank_tol)?;
        if basis.len() < n {
            return Ok(false);
        }
        let fields: Vec<VectorField> = basis.iter().map(|&i| members[i].field.clone()).collect();
        Ok(field_ranks(&fields, points, rank_tol)?.iter().all(|&r| r == n))
    })?;
    let basis = greedy_basis(&members, n, points, rank_tol)?;
    let fields: Vec<VectorField> = basis.iter().map(|&i| members[i].field.clone()).collect();
    let ranks = field_ranks(&fields, points, rank_tol)?;
    Ok(S0Family {
        depth,
        reached,
        rank: RankReport::from_ranks(depth, s.dim(), ranks, points),
        members,
        basis,
    })
}

/// Complete and vertical lifts of the observation space, on the tangent chart.
pub fn prolonged_observation_space(
    s: &ControlSystem,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Expr>, SampleError> {
    let n = s.dim();
    let space = observation_space(s, depth, points, tol)?;
    let mut out: Vec<Expr> = space
        .members
        .iter()
        .map(|m| complete_lift_fn(&m.function, n))
        .collect();
    out.extend(space.members.iter().map(|m| vertical_lift_fn(&m.function)));
    Ok(out)
}

/// Vector field of the gradient extension used as a Lie-derivative letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtensionLetter {
    /// `grad V^{g_i}`, `i = 0..=m`.
    Momentum(usize),
    /// `grad V_j^v`.
    Vertical(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionMember {
    pub letters: Vec<ExtensionLetter>,
    pub function: CotangentFunction,
}

/// Observation space of the gradient extension, generated with the closure rules
/// `L_{grad V^Y} V^X = V^{<Y:X>}`, `L_{grad V^Y} f^v = (Y f)^v`,
/// `L_{grad f^v} V^X = (X f)^v` and `L_{grad f^v} h^v = 0`.
pub fn extension_observation_space(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<ExtensionMember>, SystemError> {
    if !conn.is_torsion_free() {
        return Err(LiftError::Torsion.into());
    }
    let vocab = s.vocabulary();
    let mut letters: Vec<ExtensionLetter> = (0..vocab.len())
        .filter(|&i| !vocab[i].is_zero())
        .map(ExtensionLetter::Momentum)
        .collect();
    letters.extend((0..s.outputs.len()).map(ExtensionLetter::Vertical));

    let mut level: Vec<ExtensionMember> = s
        .outputs
        .iter()
        .map(|v| ExtensionMember {
            letters: vec![],
            function: CotangentFunction::Vertical(v.simplify()),
        })
        .chain(s.inputs.iter().map(|g| ExtensionMember {
            letters: vec![],
            function: CotangentFunction::Momentum(g.simplify()),
        }))
        .collect();
    let mut members: Vec<ExtensionMember> = Vec::new();
    for s_len in 0..=depth {
        let mut kept: Vec<ExtensionMember> = Vec::new();
        for cand in level {
            let zero = match &cand.function {
                CotangentFunction::Momentum(x) => field_vanishes(x, points, tol)?,
                CotangentFunction::Vertical(f) => vanishes(f, points, tol)?,
                CotangentFunction::Other(_) => unreachable!("closure rules stay tagged"),
            };
            if zero {
                continue;
            }
            let mut dup = false;
            for m in members.iter().chain(kept.iter()) {
                dup = match (&cand.function, &m.function) {
                    (CotangentFunction::Momentum(a), CotangentFunction::Momentum(b)) => {
                        same_field(a, b, points, tol)?
                    }
                    (CotangentFunction::Vertical(a), CotangentFunction::Vertical(b)) => {
                        same(a, b, points, tol)?
                    }
                    _ => false,
                };
                if dup {
                    break;
                }
            }
            if !dup {
                kept.push(cand);
            }
        }
        if s_len == depth {
            members.extend(kept);
            break;
        }
        let mut next = Vec::new();
        for &letter in &letters {
            for parent in &kept {
                let function = match (letter, &parent.function) {
                    (ExtensionLetter::Momentum(i), CotangentFunction::Momentum(x)) => {
                        CotangentFunction::Momentum(symmetric_product(conn, &vocab[i], x))
                    }
                    (ExtensionLetter::Momentum(i), CotangentFunction::Vertical(f)) => {
                        CotangentFunction::Vertical(lie_derivative(&vocab[i], f))
                    }
                    (ExtensionLetter::Vertical(j), CotangentFunction::Momentum(x)) => {
                        CotangentFunction::Vertical(lie_derivative(x, &s.outputs[j]))
                    }
                    // L_{grad f^v} h^v = 0
                    (ExtensionLetter::Vertical(_), _) => continue,
                    (_, CotangentFunction::Other(_)) => unreachable!("closure rules stay tagged"),
                };
                let mut word = vec![letter];
                word.extend(parent.letters.iter().copied());
                next.push(ExtensionMember {
                    letters: word,
                    function,
                });
            }
        }
        members.extend(kept);
        level = next;
    }
    Ok(members)
}

impl ExtensionLetter {
    /// The vector field on `T*M` this letter stands for.
    pub fn field(self, s: &ControlSystem, conn: &Connection) -> Result<VectorField, LiftError> {
        match self {
            ExtensionLetter::Momentum(i) => {
                cotangent_gradient(conn, &CotangentFunction::Momentum(s.vocabulary()[i].clone()))
            }
            ExtensionLetter::Vertical(j) => {
                cotangent_gradient(conn, &CotangentFunction::Vertical(s.outputs[j].clone()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_integrator() -> ControlSystem {
        let c = Chart::with_names(&["x"]).unwrap();
        ControlSystem::new(
            c.clone(),
            VectorField::zero(1),
            vec![VectorField::coordinate(1, 0)],
            vec![c.parse("x").unwrap()],
        )
        .unwrap()
    }

    fn pts(c: &Chart) -> Vec<Vec<f64>> {
        c.sample_points(16, 7)
    }

    #[test]
    fn construction_validates_shapes() {
        let c = Chart::standard(2);
        let err = ControlSystem::new(c.clone(), VectorField::zero(2), vec![], vec![Expr::var(0)]);
        assert!(matches!(err, Err(SystemError::InputOutputMismatch { .. })));
        let err = ControlSystem::new(c.clone(), VectorField::zero(1), vec![], vec![]);
        assert!(matches!(err, Err(SystemError::Dimension { .. })));
        let err = ControlSystem::new(c, VectorField::zero(2), vec![], vec![]);
        assert!(err.is_ok());
    }

    #[test]
    fn prolonged_integrator() {
        let p = prolong(&line_integrator()).unwrap();
        let sys = &p.system;
        assert_eq!(sys.dim(), 2);
        assert!(sys.drift().is_zero());
        assert_eq!(sys.inputs()[0], VectorField::new(vec![Expr::one(), Expr::zero()]));
        assert_eq!(sys.inputs()[1], VectorField::new(vec![Expr::zero(), Expr::one()]));
        assert_eq!(sys.outputs(), &[Expr::var(0), Expr::var(1)]);
        assert_eq!(sys.chart().names(), &["x".to_string(), "v_x".to_string()]);
    }

    #[test]
    fn extended_integrator() {
        let e = gradient_extension(&line_integrator(), &Connection::flat(1)).unwrap();
        let sys = &e.system;
        assert_eq!(sys.inputs()[0], VectorField::new(vec![Expr::one(), Expr::zero()]));
        assert_eq!(sys.inputs()[1], VectorField::new(vec![Expr::zero(), Expr::one()]));
        assert_eq!(sys.outputs(), &[Expr::var(0), Expr::var(1)]);
    }

    #[test]
    fn integrator_observation_space() {
        let s = line_integrator();
        let p = pts(s.chart());
        let space = observation_space(&s, 1, &p, 1e-10).unwrap();
        let f = space.functions();
        assert_eq!(f, vec![Expr::var(0), Expr::one()]);
        let space = observation_space(&s, 0, &p, 1e-10).unwrap();
        assert_eq!(space.functions(), vec![Expr::var(0)]);
    }

    #[test]
    fn rank_deficient_plane_toy() {
        let c = Chart::standard(2);
        let s = ControlSystem::new(
            c.clone(),
            VectorField::zero(2),
            vec![VectorField::coordinate(2, 0)],
            vec![Expr::var(0)],
        )
        .unwrap();
        let r = observability_rank(&s, 3, &pts(&c), 1e-10, 1e-8).unwrap();
        assert_eq!(r.max_rank, 1);
        assert!(!r.full);
        let fam = s0_closure(&s, &Connection::flat(2), 3, &pts(&c), 1e-10, 1e-8).unwrap();
        assert_eq!(fam.basis.len(), 1);
        assert!(!fam.rank.full);
    }

    #[test]
    fn full_output_system_has_full_rank_at_depth_zero() {
        let c = Chart::standard(3);
        let s = ControlSystem::new(
            c.clone(),
            VectorField::zero(3),
            (0..3).map(|a| VectorField::coordinate(3, a)).collect(),
            (0..3).map(Expr::var).collect(),
        )
        .unwrap();
        assert!(observability_rank(&s, 0, &pts(&c), 1e-10, 1e-8).unwrap().full);
    }

    #[test]
    fn constant_inputs_with_flat_connection() {
        let c = Chart::standard(2);
        let s = ControlSystem::new(
            c.clone(),
            VectorField::zero(2),
            vec![VectorField::coordinate(2, 0), VectorField::coordinate(2, 1)],
            vec![Expr::var(0), Expr::var(1)],
        )
        .unwrap();
        for depth in 0..3 {
            let fam = s0_closure(&s, &Connection::flat(2), depth, &pts(&c), 1e-10, 1e-8).unwrap();
            assert_eq!(fam.members.iter().filter(|m| !m.field.is_zero()).count(), 2);
            assert!(fam.rank.full);
        }
    }

    #[test]
    fn extension_space_of_integrator() {
        let s = line_integrator();
        let c = cotangent_chart(s.chart()).unwrap();
        let members =
            extension_observation_space(&s, &Connection::flat(1), 1, &pts(&c), 1e-10).unwrap();
        let exprs: Vec<Expr> = members.iter().map(|m| m.function.expr()).collect();
        for expected in [Expr::var(1), Expr::var(0), Expr::one()] {
            assert!(exprs.contains(&expected), "{expected:?} missing");
        }
        for m in &members {
            let e = m.function.expr();
            assert!(e.diff(1).diff(1).is_zero());
        }
    }

    #[test]
    fn word_labels() {
        let w = Word {
            prefix: vec![2, 1],
            terminal: 0,
        };
        assert_eq!(w.label(), "g2:g1:[1]");
    }
}
