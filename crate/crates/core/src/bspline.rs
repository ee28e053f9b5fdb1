//! B-spline basis functions on a clamped knot sequence.
//!
//! Degree is counted the survey-calibration way: a basis of degree `m` is made
//! of piecewise polynomials of order `m - 1`, so `m = 1` gives step functions
//! and the basis dimension is `q = m + K` for `K` interior knots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior and boundary knots of a clamped B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    interior: Vec<f64>,
    low: f64,
    high: f64,
    /// Interior knots requested but dropped because they tied with a
    /// neighbour or a boundary.
    collapsed: usize,
}

impl KnotVector {
    pub fn new(degree: usize, interior: Vec<f64>, low: f64, high: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("spline degree m must be >= 1".into()));
        }
        if !(low.is_finite() && high.is_finite()) || low > high {
            return Err(Error::InvalidArgument(format!(
                "invalid knot boundaries [{low}, {high}]"
            )));
        }
        if low == high && (degree > 1 || !interior.is_empty()) {
            return Err(Error::DegenerateAuxiliary(
                "auxiliary range has zero width".into(),
            ));
        }
        let mut prev = low;
        for &k in &interior {
            if !(k > prev && k < high) {
                return Err(Error::InvalidArgument(format!(
                    "interior knots must be strictly increasing inside ({low}, {high}); got {k}"
                )));
            }
            prev = k;
        }
        Ok(Self {
            degree,
            interior,
            low,
            high,
            collapsed: 0,
        })
    }

    /// Places `k` interior knots at the `j/(k+1)` population quantiles of `z_pop`.
    ///
    /// Quantiles are type-1 order statistics: the value at 1-based rank
    /// `ceil(j * N / (k + 1))` of the sorted frame. Quantiles that tie with one
    /// another or with the extremes are collapsed, which lowers `K`; the
    /// number of dropped knots is available from [`KnotVector::collapsed`].
    pub fn place(z_pop: &[f64], k: usize, degree: usize) -> Result<Self> {
        if z_pop.is_empty() {
            return Err(Error::InvalidArgument("empty population frame".into()));
        }
        if degree == 0 {
            return Err(Error::InvalidArgument("spline degree m must be >= 1".into()));
        }
        if let Some(bad) = z_pop.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite auxiliary value {bad}"
            )));
        }
        let mut sorted = z_pop.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let low = sorted[0];
        let high = sorted[n - 1];
        if low == high && (k > 0 || degree > 1) {
            return Err(Error::DegenerateAuxiliary(format!(
                "all {n} auxiliary values equal {low}"
            )));
        }

        let mut interior: Vec<f64> = Vec::with_capacity(k);
        for j in 1..=k {
            let rank = (j * n).div_ceil(k + 1);
            let q = sorted[rank - 1];
            if q > low && q < high && interior.last().is_none_or(|&last| q > last) {
                interior.push(q);
            }
        }
        let collapsed = k - interior.len();
        let mut kv = Self::new(degree, interior, low, high)?;
        kv.collapsed = collapsed;
        Ok(kv)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn collapsed(&self) -> usize {
        self.collapsed
    }

    /// Basis dimension `q = m + K`.
    pub fn num_basis(&self) -> usize {
        self.degree + self.interior.len()
    }

    /// Full knot sequence with each boundary repeated `m` times.
    pub fn clamped_sequence(&self) -> Vec<f64> {
        let m = self.degree;
        let mut seq = Vec::with_capacity(2 * m + self.interior.len());
        seq.extend(std::iter::repeat_n(self.low, m));
        seq.extend_from_slice(&self.interior);
        seq.extend(std::iter::repeat_n(self.high, m));
        seq
    }
}

/// Convenience wrapper around [`KnotVector::place`].
pub fn place_knots(z_pop: &[f64], k: usize, degree: usize) -> Result<KnotVector> {
    KnotVector::place(z_pop, k, degree)
}

/// An immutable B-spline basis `b(z) = (B_1(z), ..., B_q(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: KnotVector,
    seq: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(knots: KnotVector) -> Self {
        let seq = knots.clamped_sequence();
        Self { knots, seq }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn degree(&self) -> usize {
        self.knots.degree
    }

    pub fn clamp(&self, z: f64) -> f64 {
        z.clamp(self.knots.low, self.knots.high)
    }

    // Index `i` of the knot span with seq[i] <= z < seq[i+1]; the last span is closed.
    fn span(&self, z: f64) -> usize {
        let p = self.knots.degree - 1;
        let last = self.dim() - 1;
        if z >= self.seq[last + 1] {
            return last;
        }
        let (mut lo, mut hi) = (p, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if z < self.seq[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Writes the `m` possibly nonzero basis values at `z` into `out` and
    /// returns the index of the first one. `out` must have length `m`.
    pub fn evaluate_local(&self, z: f64, out: &mut [f64]) -> usize {
        let m = self.knots.degree;
        debug_assert_eq!(out.len(), m);
        let z = self.clamp(z);
        let i = self.span(z);
        let p = m - 1;

        let mut left = vec![0.0; m];
        let mut right = vec![0.0; m];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = z - self.seq[i + 1 - j];
            right[j] = self.seq[i + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        i - p
    }

    pub fn evaluate(&self, z: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.dim()];
        let mut local = vec![0.0; self.degree()];
        let first = self.evaluate_local(z, &mut local);
        full[first..first + local.len()].copy_from_slice(&local);
        full
    }

    /// Row `i` is `evaluate(z_list[i])`.
    pub fn basis_matrix(&self, z_list: &[f64]) -> DMatrix<f64> {
        let m = self.degree();
        let mut out = DMatrix::zeros(z_list.len(), self.dim());
        let mut local = vec![0.0; m];
        for (row, &z) in z_list.iter().enumerate() {
            let first = self.evaluate_local(z, &mut local);
            for (k, &v) in local.iter().enumerate() {
                out[(row, first + k)] = v;
            }
        }
        out
    }

    /// Column sums of the basis matrix over `z_list`: `t_b = sum b(z_i)`.
    pub fn totals(&self, z_list: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.dim()];
        let mut local = vec![0.0; self.degree()];
        for &z in z_list {
            let first = self.evaluate_local(z, &mut local);
            for (k, &v) in local.iter().enumerate() {
                t[first + k] += v;
            }
        }
        t
    }

    /// Greville abscissae `xi_j`, for which `sum_j xi_j B_j(z) = z`.
    /// Step functions (`m = 1`) do not reproduce `z`, so this is `None` there.
    pub fn greville(&self) -> Option<Vec<f64>> {
        let p = self.degree() - 1;
        if p == 0 {
            return None;
        }
        Some(
            (0..self.dim())
                .map(|j| self.seq[j + 1..=j + p].iter().sum::<f64>() / p as f64)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Textbook recursive Cox-de Boor, used as an independent oracle.
    fn cox_de_boor(seq: &[f64], i: usize, order: usize, z: f64, last: usize) -> f64 {
        if order == 1 {
            let inside = seq[i] <= z && z < seq[i + 1];
            let closing = z == seq[seq.len() - 1] && i == last && seq[i] < seq[i + 1];
            return if inside || closing { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = seq[i + order - 1] - seq[i];
        if d1 > 0.0 {
            v += (z - seq[i]) / d1 * cox_de_boor(seq, i, order - 1, z, last);
        }
        let d2 = seq[i + order] - seq[i + 1];
        if d2 > 0.0 {
            v += (seq[i + order] - z) / d2 * cox_de_boor(seq, i + 1, order - 1, z, last);
        }
        v
    }

    #[test]
    fn zero_interior_knots() {
        let kv = place_knots(&[0.0, 0.25, 0.5, 0.75, 1.0], 0, 1).unwrap();
        assert!(kv.interior().is_empty());
        assert_eq!((kv.low(), kv.high()), (0.0, 1.0));
        let b = BSplineBasis::new(kv);
        for z in [0.0, 0.3, 1.0, 7.0] {
            assert_eq!(b.evaluate(z), vec![1.0]);
        }
    }

    #[test]
    fn quantile_knots_on_grid() {
        // Oracle: sort, then take the ceil(p*N)-th order statistic by hand.
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let mut sorted = grid.clone();
        sorted.sort_by(f64::total_cmp);
        let expected: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|p| sorted[(p * 101.0_f64).ceil() as usize - 1])
            .collect();
        assert_eq!(expected, vec![0.25, 0.5, 0.75]);
        let kv = place_knots(&grid, 3, 3).unwrap();
        assert_eq!(kv.interior(), expected.as_slice());
        assert_eq!(kv.num_basis(), 6);
    }

    #[test]
    fn constant_frame_is_degenerate() {
        let z = vec![2.0; 50];
        for k in 1..4 {
            assert!(matches!(
                place_knots(&z, k, 3),
                Err(Error::DegenerateAuxiliary(_))
            ));
        }
        assert!(place_knots(&z, 0, 1).is_ok());
    }

    #[test]
    fn tied_quantiles_collapse() {
        let mut z = vec![0.0; 60];
        z.extend((1..=40).map(|i| i as f64));
        let kv = place_knots(&z, 4, 3).unwrap();
        // The 1/5, 2/5 and 3/5 quantiles sit on the lower boundary.
        assert_eq!(kv.interior().len(), 1);
        assert_eq!(kv.collapsed(), 3);
        assert_eq!(kv.num_basis(), 4);
    }

    #[test]
    fn six_functions_for_cubic_with_three_knots() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let b = BSplineBasis::new(place_knots(&grid, 3, 3).unwrap());
        assert_eq!(b.evaluate(0.4).len(), 6);
    }

    #[test]
    fn hat_functions_at_interior_knot() {
        let kv = KnotVector::new(2, vec![0.5], 0.0, 1.0).unwrap();
        let b = BSplineBasis::new(kv);
        // Hand-evaluated hats: B1 = (0.5-z)/0.5 on [0,.5], B2 peak at .5, B3 = (z-.5)/.5.
        let hat = |z: f64| {
            [
                ((0.5 - z) / 0.5).max(0.0),
                if z <= 0.5 { z / 0.5 } else { (1.0 - z) / 0.5 },
                ((z - 0.5) / 0.5).max(0.0),
            ]
        };
        assert_eq!(b.evaluate(0.5), vec![0.0, 1.0, 0.0]);
        for z in [0.0, 0.1, 0.37, 0.5, 0.81, 1.0] {
            let v = b.evaluate(z);
            let h = hat(z);
            for j in 0..3 {
                assert!((v[j] - h[j]).abs() < 1e-15, "z={z} j={j}");
            }
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        for m in 1..=5 {
            let kv = KnotVector::new(m, vec![0.1, 0.35, 0.4, 0.8], 0.0, 1.0).unwrap();
            let b = BSplineBasis::new(kv.clone());
            let seq = kv.clamped_sequence();
            let last = kv.num_basis() - 1;
            for step in 0..=200 {
                let z = step as f64 / 200.0;
                let v = b.evaluate(z);
                for (j, vj) in v.iter().enumerate() {
                    let o = cox_de_boor(&seq, j, m, z, last);
                    assert!((vj - o).abs() < 1e-12, "m={m} z={z} j={j}: {vj} vs {o}");
                }
            }
        }
    }

    #[test]
    fn out_of_range_is_clamped() {
        let b = BSplineBasis::new(KnotVector::new(3, vec![0.5], 0.0, 1.0).unwrap());
        assert_eq!(b.evaluate(-3.0), b.evaluate(0.0));
        assert_eq!(b.evaluate(9.0), b.evaluate(1.0));
    }

    #[test]
    fn empty_matrix_and_totals() {
        let b = BSplineBasis::new(KnotVector::new(3, vec![0.2, 0.6], 0.0, 1.0).unwrap());
        let m = b.basis_matrix(&[]);
        assert_eq!((m.nrows(), m.ncols()), (0, 5));

        let z: Vec<f64> = (0..57).map(|i| (i as f64 * 0.618).fract()).collect();
        let bm = b.basis_matrix(&z);
        let t = b.totals(&z);
        for j in 0..5 {
            let direct: f64 = (0..z.len()).map(|i| bm[(i, j)]).sum();
            assert!((direct - t[j]).abs() < 1e-12);
        }
        for i in 0..z.len() {
            assert!((bm.row(i).sum() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn greville_reproduces_identity() {
        let b = BSplineBasis::new(KnotVector::new(4, vec![0.2, 0.3, 0.9], -1.0, 2.0).unwrap());
        let xi = b.greville().unwrap();
        for z in [-1.0, -0.3, 0.25, 1.5, 2.0] {
            let v = b.evaluate(z);
            let s: f64 = v.iter().zip(&xi).map(|(a, b)| a * b).sum();
            assert!((s - z).abs() < 1e-13);
        }
        assert!(BSplineBasis::new(KnotVector::new(1, vec![0.5], 0.0, 1.0).unwrap())
            .greville()
            .is_none());
    }
}
