//! Small dense SPD helpers shared by calibration and residualization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry count as rank loss.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix, rejected when a
/// pivot falls below [`RANK_TOLERANCE`] relative to the largest diagonal.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(g: &DMatrix<f64>) -> Result<Self> {
        let max_diag = g.diagonal().iter().cloned().fold(0.0_f64, f64::max);
        if g.nrows() == 0 || !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err(Error::SingularGram {
                condition: f64::INFINITY,
            });
        }
        let chol = Cholesky::new(g.clone()).ok_or_else(|| Error::SingularGram {
            condition: condition_number(g),
        })?;
        let l = chol.l_dirty();
        for j in 0..g.nrows() {
            let pivot = l[(j, j)] * l[(j, j)];
            if !(pivot > RANK_TOLERANCE * max_diag) {
                return Err(Error::SingularGram {
                    condition: condition_number(g),
                });
            }
        }
        Ok(Self { chol })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_number(g: &DMatrix<f64>) -> f64 {
    if g.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(g.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Weighted Gram matrix `sum_i w_i r_i r_i'` over the rows of `rows`.
pub fn weighted_gram(rows: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let q = rows.ncols();
    let mut g = DMatrix::zeros(q, q);
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for a in 0..q {
            let ra = rows[(i, a)];
            if ra == 0.0 {
                continue;
            }
            let s = wi * ra;
            for b in a..q {
                g[(a, b)] += s * rows[(i, b)];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// `sum_i w_i v_i r_i` for a per-row scalar `v`.
pub fn weighted_cross(rows: &DMatrix<f64>, w: &[f64], v: &[f64]) -> DVector<f64> {
    let q = rows.ncols();
    let mut out = DVector::zeros(q);
    for (i, (&wi, &vi)) in w.iter().zip(v).enumerate() {
        let s = wi * vi;
        if s == 0.0 {
            continue;
        }
        for a in 0..q {
            out[a] += s * rows[(i, a)];
        }
    }
    out
}
