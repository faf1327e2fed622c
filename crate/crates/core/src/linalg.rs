//! Numeric rank and small symbolic determinants/inverses.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::expr::Expr;

/// Default relative singular-value threshold for numeric rank.
pub const RANK_TOL: f64 = 1e-8;

/// Largest dimension for which matrices are inverted symbolically.
pub const SYMBOLIC_MAX_DIM: usize = 6;

/// Number of singular values `>= rel_tol * largest`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel_tol * largest).count()
}

/// Matrix whose columns are the given vectors.
pub fn columns(vectors: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r])
}

struct DetMemo<'a> {
    m: &'a [Vec<Expr>],
    memo: HashMap<(usize, u64), Expr>,
}

impl DetMemo<'_> {
    // determinant of rows row.. restricted to columns in `mask`
    fn det(&mut self, row: usize, mask: u64) -> Expr {
        let n = self.m.len();
        if row == n {
            return Expr::one();
        }
        if let Some(d) = self.memo.get(&(row, mask)) {
            return d.clone();
        }
        let mut terms = Vec::new();
        let mut sign = 1.0;
        for col in 0..n {
            if mask & (1 << col) == 0 {
                continue;
            }
            let entry = &self.m[row][col];
            if !entry.is_zero() {
                let minor = self.det(row + 1, mask & !(1 << col));
                if !minor.is_zero() {
                    terms.push(Expr::product([Expr::constant(sign), entry.clone(), minor]));
                }
            }
            sign = -sign;
        }
        let d = Expr::sum(terms).simplify();
        self.memo.insert((row, mask), d.clone());
        d
    }
}

/// Symbolic determinant by Laplace expansion with memoized minors.
pub fn symbolic_det(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    assert!(n <= 63, "symbolic determinant limited to small matrices");
    DetMemo {
        m,
        memo: HashMap::new(),
    }
    .det(0, (1u64 << n) - 1)
}

/// Cofactor inverse; `None` when the determinant simplifies to zero.
pub fn symbolic_inverse(m: &[Vec<Expr>]) -> Option<(Vec<Vec<Expr>>, Expr)> {
    let n = m.len();
    let det = symbolic_det(m);
    if det.is_zero() {
        return None;
    }
    if n == 1 {
        return Some((vec![vec![Expr::powi(det.clone(), -1).simplify()]], det));
    }
    let inv_det = Expr::powi(det.clone(), -1);
    let mut inv = vec![vec![Expr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let minor: Vec<Vec<Expr>> = (0..n)
                .filter(|&r| r != i)
                .map(|r| {
                    (0..n)
                        .filter(|&c| c != j)
                        .map(|c| m[r][c].clone())
                        .collect()
                })
                .collect();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let cof = symbolic_det(&minor);
            // inverse is the transposed cofactor matrix over the determinant
            inv[j][i] = Expr::product([Expr::constant(sign), cof, inv_det.clone()]).simplify();
        }
    }
    Some((inv, det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Chart;

    #[test]
    fn rank_with_tolerance() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0 + 1e-12]);
        assert_eq!(numeric_rank(&m, RANK_TOL), 1);
        assert_eq!(numeric_rank(&DMatrix::identity(3, 3), RANK_TOL), 3);
        assert_eq!(numeric_rank(&DMatrix::zeros(2, 2), RANK_TOL), 0);
        assert_eq!(numeric_rank(&DMatrix::zeros(2, 0), RANK_TOL), 0);
    }

    #[test]
    fn symbolic_inverse_matches_numeric() {
        let c = Chart::standard(3);
        let m: Vec<Vec<Expr>> = [
            ["2 + x1^2", "x2", "0"],
            ["x2", "exp(x3)", "1"],
            ["0", "1", "3"],
        ]
        .iter()
        .map(|row| row.iter().map(|s| c.parse(s).unwrap()).collect())
        .collect();
        let (inv, det) = symbolic_inverse(&m).unwrap();
        for p in c.sample_points(10, 1) {
            let num = DMatrix::from_fn(3, 3, |r, k| m[r][k].eval(&p).unwrap());
            let num_inv = num.clone().try_inverse().unwrap();
            assert!((det.eval(&p).unwrap() - num.determinant()).abs() < 1e-12);
            for r in 0..3 {
                for k in 0..3 {
                    assert!((inv[r][k].eval(&p).unwrap() - num_inv[(r, k)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_symbolic_matrix() {
        let c = Chart::standard(1);
        let m = vec![
            vec![c.parse("x1").unwrap(), c.parse("2*x1").unwrap()],
            vec![c.parse("1").unwrap(), c.parse("2").unwrap()],
        ];
        assert!(symbolic_inverse(&m).is_none());
    }
}
