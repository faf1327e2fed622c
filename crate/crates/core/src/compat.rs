//! Compatibility of a control system with an affine connection.
//!
//! Each word `X_1 ... X_s` over `g_0..g_m` ending in index `j` yields a pair
//! `(R, H) = (<X_1 : ... <X_s : g_j>>, L_{X_1} ... L_{X_s} V_j)`. Condition (a)
//! asks `dH_Y(R_X) = dH_X(R_Y)` for all pairs; condition (b) asks
//! `dH_Z(<R_X : R_Y>) = R_Z(R_X(H_Y))` for all triples. Both sides are evaluated
//! from numeric jets at the sample points.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{Expr, SampleError};
use crate::geometry::Connection;
use crate::systems::{s0_closure, word_pairs, ControlSystem, FieldMember, RankReport};

pub const DEFAULT_DEPTH_A: usize = 2;
pub const DEFAULT_DEPTH_B: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompatError {
    #[error("S_0 not full rank: rank {min_rank} < {dim} at {witness:?}")]
    RankDeficient {
        min_rank: usize,
        dim: usize,
        witness: Vec<f64>,
    },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub identity: String,
    pub point: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub holds: bool,
    pub identities: usize,
    /// Worst `|lhs - rhs| / (1 + |lhs|)`.
    pub max_residual: f64,
    pub worst: Option<Witness>,
}

/// Values at one point of a pair `(R, H)` and the derivatives the identities need.
struct Jet {
    r: DVector<f64>,
    jr: DMatrix<f64>,
    dh: DVector<f64>,
    hh: Option<DMatrix<f64>>,
}

struct Jets {
    labels: Vec<String>,
    /// `jets[member][point]`
    jets: Vec<Vec<Jet>>,
    /// `Gamma` per point.
    gamma: Vec<Vec<f64>>,
    n: usize,
}

fn sample<T>(p: &[f64], r: Result<T, crate::expr::EvalError>) -> Result<T, SampleError> {
    r.map_err(|source| SampleError {
        point: p.to_vec(),
        source,
    })
}

impl Jets {
    fn build(
        members: &[&FieldMember],
        conn: &Connection,
        points: &[Vec<f64>],
        second_order: bool,
    ) -> Result<Jets, SampleError> {
        let n = conn.dim();
        let mut jets = Vec::with_capacity(members.len());
        for m in members {
            let jr: Vec<Expr> = m.field.jacobian().into_iter().flatten().collect();
            let dh = m.function.gradient(n);
            let hh: Option<Vec<Expr>> = second_order
                .then(|| dh.iter().flat_map(|d| d.gradient(n)).collect());
            let mut per_point = Vec::with_capacity(points.len());
            for p in points {
                per_point.push(Jet {
                    r: DVector::from_vec(sample(p, m.field.eval(p))?),
                    jr: DMatrix::from_row_slice(n, n, &sample(p, Expr::eval_all(&jr, p))?),
                    dh: DVector::from_vec(sample(p, Expr::eval_all(&dh, p))?),
                    hh: match &hh {
                        Some(h) => Some(DMatrix::from_row_slice(n, n, &sample(p, Expr::eval_all(h, p))?)),
                        None => None,
                    },
                });
            }
            jets.push(per_point);
        }
        let gamma = points
            .iter()
            .map(|p| sample(p, conn.eval(p)))
            .collect::<Result<_, _>>()?;
        Ok(Jets {
            labels: members.iter().map(|m| m.word.label()).collect(),
            jets,
            gamma,
            n,
        })
    }

    /// `<R_x : R_y>` at point `p`.
    fn symmetric_product(&self, x: usize, y: usize, p: usize) -> DVector<f64> {
        let (a, b) = (&self.jets[x][p], &self.jets[y][p]);
        let n = self.n;
        let g = &self.gamma[p];
        let mut out = &b.jr * &a.r + &a.jr * &b.r;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    let gijk = g[i * n * n + j * n + k];
                    if gijk != 0.0 {
                        s += gijk * (a.r[j] * b.r[k] + b.r[j] * a.r[k]);
                    }
                }
            }
            out[i] += s;
        }
        out
    }

    /// `d(R_x(H_y))` at point `p`.
    fn d_lie(&self, x: usize, y: usize, p: usize) -> DVector<f64> {
        let (a, b) = (&self.jets[x][p], &self.jets[y][p]);
        let hess = b.hh.as_ref().expect("second-order jets");
        hess * &a.r + a.jr.transpose() * &b.dh
    }
}

struct Tracker {
    tol: f64,
    report: ConditionReport,
}

impl Tracker {
    fn new(tol: f64) -> Self {
        Tracker {
            tol,
            report: ConditionReport {
                holds: true,
                identities: 0,
                max_residual: 0.0,
                worst: None,
            },
        }
    }

    fn record(&mut self, identity: impl FnOnce() -> String, point: &[f64], lhs: f64, rhs: f64) {
        let r = (lhs - rhs).abs() / (1.0 + lhs.abs());
        if self.report.worst.is_none() || r > self.report.max_residual || r.is_nan() {
            self.report.max_residual = r;
            self.report.worst = Some(Witness {
                identity: identity(),
                point: point.to_vec(),
                lhs,
                rhs,
            });
        }
    }

    fn finish(mut self) -> ConditionReport {
        self.report.holds = self.report.max_residual <= self.tol;
        self.report
    }
}

fn condition_a(jets: &Jets, points: &[Vec<f64>], tol: f64) -> ConditionReport {
    let mut t = Tracker::new(tol);
    let k = jets.jets.len();
    for x in 0..k {
        for y in x..k {
            t.report.identities += 1;
            for (p, pt) in points.iter().enumerate() {
                let (a, b) = (&jets.jets[x][p], &jets.jets[y][p]);
                let lhs = b.dh.dot(&a.r);
                let rhs = a.dh.dot(&b.r);
                t.record(
                    || format!("(a) X={} Y={}", jets.labels[x], jets.labels[y]),
                    pt,
                    lhs,
                    rhs,
                );
            }
        }
    }
    t.finish()
}

fn condition_b(jets: &Jets, points: &[Vec<f64>], tol: f64) -> ConditionReport {
    let mut t = Tracker::new(tol);
    let k = jets.jets.len();
    for x in 0..k {
        for y in 0..k {
            for z in 0..k {
                t.report.identities += 1;
                for (p, pt) in points.iter().enumerate() {
                    let lhs = jets.jets[z][p].dh.dot(&jets.symmetric_product(x, y, p));
                    let rhs = jets.d_lie(x, y, p).dot(&jets.jets[z][p].r);
                    t.record(
                        || {
                            format!(
                                "(b) X={} Y={} Z={}",
                                jets.labels[x], jets.labels[y], jets.labels[z]
                            )
                        },
                        pt,
                        lhs,
                        rhs,
                    );
                }
            }
        }
    }
    t.finish()
}

pub fn check_condition_a(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ConditionReport, SampleError> {
    let members = word_pairs(s, conn, depth, points, tol)?;
    let refs: Vec<&FieldMember> = members.iter().collect();
    Ok(condition_a(&Jets::build(&refs, conn, points, false)?, points, tol))
}

pub fn check_condition_b(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ConditionReport, SampleError> {
    let members = word_pairs(s, conn, depth, points, tol)?;
    let refs: Vec<&FieldMember> = members.iter().collect();
    Ok(condition_b(&Jets::build(&refs, conn, points, true)?, points, tol))
}

/// Condition (a) after subtracting, per pair, the mean discrepancy over the points.
pub fn check_condition_a_modulo_constants(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ConditionReport, SampleError> {
    let members = word_pairs(s, conn, depth, points, tol)?;
    let refs: Vec<&FieldMember> = members.iter().collect();
    let jets = Jets::build(&refs, conn, points, false)?;
    let mut t = Tracker::new(tol);
    let k = jets.jets.len();
    for x in 0..k {
        for y in x..k {
            t.report.identities += 1;
            let diffs: Vec<(f64, f64)> = (0..points.len())
                .map(|p| {
                    let (a, b) = (&jets.jets[x][p], &jets.jets[y][p]);
                    (b.dh.dot(&a.r), a.dh.dot(&b.r))
                })
                .collect();
            let mean = diffs.iter().map(|(l, r)| l - r).sum::<f64>() / diffs.len().max(1) as f64;
            for (pt, (lhs, rhs)) in points.iter().zip(diffs) {
                t.record(
                    || format!("(a mod const) X={} Y={}", jets.labels[x], jets.labels[y]),
                    pt,
                    lhs,
                    rhs + mean,
                );
            }
        }
    }
    Ok(t.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisCompatibility {
    pub basis: Vec<String>,
    pub rank: RankReport,
    pub a: ConditionReport,
    pub b: ConditionReport,
}

impl BasisCompatibility {
    pub fn holds(&self) -> bool {
        self.a.holds && self.b.holds
    }
}

/// Conditions (a) and (b) restricted to a greedy basis of `S_0`.
pub fn check_compatibility_on_basis(
    s: &ControlSystem,
    conn: &Connection,
    depth: usize,
    points: &[Vec<f64>],
    tol: f64,
    rank_tol: f64,
) -> Result<BasisCompatibility, CompatError> {
    let fam = s0_closure(s, conn, depth, points, tol, rank_tol)?;
    if !fam.rank.full || fam.basis.len() != s.dim() {
        return Err(CompatError::RankDeficient {
            min_rank: fam.rank.min_rank,
            dim: s.dim(),
            witness: fam.rank.witness.clone(),
        });
    }
    let basis = fam.basis_members();
    let jets = Jets::build(&basis, conn, points, true)?;
    Ok(BasisCompatibility {
        basis: jets.labels.clone(),
        a: condition_a(&jets, points, tol),
        b: condition_b(&jets, points, tol),
        rank: fam.rank.clone(),
    })
}
