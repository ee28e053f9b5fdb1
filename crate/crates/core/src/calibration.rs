//! Calibration weights: chi-square distance to the design weights subject to
//! exact reproduction of known population totals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, weighted_gram, SpdFactor};

/// Weighting strategy used to estimate the population score equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Horvitz-Thompson weights `d_i`.
    #[serde(rename = "HT")]
    Ht,
    /// Linear calibration on `(1, z)`.
    #[serde(rename = "GREG", alias = "LinearGREG")]
    LinearGreg,
    /// Calibration on a B-spline basis of `z`.
    #[serde(rename = "BSpline")]
    BSpline,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ht, Strategy::LinearGreg, Strategy::BSpline];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ht => "HT",
            Strategy::LinearGreg => "GREG",
            Strategy::BSpline => "BSpline",
        }
    }

    pub fn uses_auxiliary(self) -> bool {
        !matches!(self, Strategy::Ht)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ht" | "horvitz-thompson" => Ok(Strategy::Ht),
            "greg" | "lineargreg" | "linear-greg" | "linear" => Ok(Strategy::LinearGreg),
            "bspline" | "b-spline" | "spline" => Ok(Strategy::BSpline),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationWeights {
    pub weights: Vec<f64>,
    pub strategy: Strategy,
    /// `max_j |sum_s w_i B_j(z_i) - t_j|`.
    pub constraint_gap: f64,
    /// Eigenvalue-ratio condition number of the weighted Gram matrix.
    pub gram_condition: Option<f64>,
    pub negative_weights: usize,
}

impl CalibrationWeights {
    /// Horvitz-Thompson weights passed through unchanged.
    pub fn horvitz_thompson(d: &[f64]) -> Self {
        Self {
            weights: d.to_vec(),
            strategy: Strategy::Ht,
            constraint_gap: 0.0,
            gram_condition: None,
            negative_weights: d.iter().filter(|&&w| w < 0.0).count(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Knobs for exploratory use. The defaults reproduce the plain estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CalibrationOptions {
    /// Adds `ridge * I` to the Gram matrix. Changes the estimator; off by default.
    pub ridge: Option<f64>,
}

fn check_shapes(d: &[f64], rows: &DMatrix<f64>, totals: &[f64]) -> Result<()> {
    if rows.nrows() != d.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} basis rows",
            d.len(),
            rows.nrows()
        )));
    }
    if rows.ncols() != totals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} totals for {} calibration variables",
            totals.len(),
            rows.ncols()
        )));
    }
    Ok(())
}

/// `w_i = d_i (1 - q_i b_i' G^{-1} (t_hat - t))`, `G = sum_s d_i q_i b_i b_i'`.
///
/// This is the minimizer of `sum (w_i - d_i)^2 / (q_i d_i)` subject to
/// `sum_s w_i b_i = t`. `q_unit = None` means `q_i = 1`.
pub fn calibrate(
    d: &[f64],
    rows: &DMatrix<f64>,
    totals: &[f64],
    q_unit: Option<&[f64]>,
    strategy: Strategy,
    options: CalibrationOptions,
) -> Result<CalibrationWeights> {
    check_shapes(d, rows, totals)?;
    if let Some(q) = q_unit {
        if q.len() != d.len() || q.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "q_i must be positive, one per unit".into(),
            ));
        }
    }
    let dq: Vec<f64> = match q_unit {
        Some(q) => d.iter().zip(q).map(|(a, b)| a * b).collect(),
        None => d.to_vec(),
    };
    let mut gram = weighted_gram(rows, &dq);
    if let Some(eps) = options.ridge {
        for j in 0..gram.nrows() {
            gram[(j, j)] += eps;
        }
    }
    let factor = SpdFactor::new(&gram)?;
    let condition = condition_number(&gram);

    let q = rows.ncols();
    let mut gap = DVector::zeros(q);
    for (i, &di) in d.iter().enumerate() {
        for j in 0..q {
            gap[j] += di * rows[(i, j)];
        }
    }
    for j in 0..q {
        gap[j] -= totals[j];
    }
    let lambda = factor.solve(&gap);

    let weights: Vec<f64> = (0..d.len())
        .map(|i| {
            let qi = q_unit.map_or(1.0, |q| q[i]);
            let proj: f64 = (0..q).map(|j| rows[(i, j)] * lambda[j]).sum();
            d[i] * (1.0 - qi * proj)
        })
        .collect();

    let constraint_gap = verify_constraints(&weights, rows, totals);
    Ok(CalibrationWeights {
        negative_weights: weights.iter().filter(|&&w| w < 0.0).count(),
        weights,
        strategy,
        constraint_gap,
        gram_condition: Some(condition),
    })
}

/// B-spline calibration weights for sample basis matrix `bs` and population
/// basis totals `t_b`.
pub fn bspline_weights(
    d: &[f64],
    bs: &DMatrix<f64>,
    t_b: &[f64],
    q_unit: Option<&[f64]>,
) -> Result<CalibrationWeights> {
    calibrate(d, bs, t_b, q_unit, Strategy::BSpline, CalibrationOptions::default())
}

/// The `q_i = 1` form `w_i = d_i t_b' (sum_s d_k b_k b_k')^{-1} b_i`.
///
/// Algebraically identical to [`bspline_weights`] whenever the basis spans
/// the constants; kept as an independent route for cross-checking.
pub fn bspline_weights_unit_q(d: &[f64], bs: &DMatrix<f64>, t_b: &[f64]) -> Result<Vec<f64>> {
    check_shapes(d, bs, t_b)?;
    let gram = weighted_gram(bs, d);
    let a = SpdFactor::new(&gram)?.solve(&DVector::from_column_slice(t_b));
    Ok((0..d.len())
        .map(|i| d[i] * (0..bs.ncols()).map(|j| bs[(i, j)] * a[j]).sum::<f64>())
        .collect())
}

/// Rows `(1, z_i)` for linear calibration.
pub fn linear_design(z: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(z.len(), 2, |i, j| if j == 0 { 1.0 } else { z[i] })
}

/// Linear GREG weights calibrated on `N` and `t_z = sum_U z`.
pub fn linear_greg_weights(
    d: &[f64],
    z_sample: &[f64],
    population_size: f64,
    t_z: f64,
) -> Result<CalibrationWeights> {
    calibrate(
        d,
        &linear_design(z_sample),
        &[population_size, t_z],
        None,
        Strategy::LinearGreg,
        CalibrationOptions::default(),
    )
}

/// `max_j |sum_s w_i B_j(z_i) - t_j|`.
pub fn verify_constraints(w: &[f64], rows: &DMatrix<f64>, totals: &[f64]) -> f64 {
    (0..rows.ncols())
        .map(|j| {
            let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * rows[(i, j)]).sum();
            (s - totals[j]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{BSplineBasis, KnotVector};

    fn unif(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn constant_basis_keeps_srswor_weights() {
        let d = vec![20.0; 5];
        let rows = DMatrix::from_element(5, 1, 1.0);
        let w = bspline_weights(&d, &rows, &[100.0], None).unwrap();
        for wi in &w.weights {
            assert!((wi - 20.0).abs() < 1e-12);
        }
        assert_eq!(w.strategy, Strategy::BSpline);
    }

    #[test]
    fn reproduces_count_and_linear_total() {
        let pop = unif(400, 3);
        let basis = BSplineBasis::new(KnotVector::place(&pop, 4, 3).unwrap());
        let t_b = basis.totals(&pop);
        let sample: Vec<f64> = pop.iter().step_by(8).cloned().collect();
        let d = vec![8.0; sample.len()];
        let w = bspline_weights(&d, &basis.basis_matrix(&sample), &t_b, None).unwrap();
        let n_hat: f64 = w.weights.iter().sum();
        let tz_hat: f64 = w.weights.iter().zip(&sample).map(|(a, b)| a * b).sum();
        let t_z: f64 = pop.iter().sum();
        assert!((n_hat - 400.0).abs() < 1e-9 * 400.0);
        assert!((tz_hat - t_z).abs() < 1e-9 * t_z);
    }

    #[test]
    fn greg_constant_z_is_singular() {
        let d = vec![2.0; 6];
        let r = linear_greg_weights(&d, &[1.5; 6], 12.0, 18.0);
        assert!(matches!(r, Err(Error::SingularGram { .. })));
    }

    #[test]
    fn greg_reproduces_totals() {
        let z = unif(30, 9);
        let d = vec![10.0; 30];
        let w = linear_greg_weights(&d, &z, 300.0, 160.0).unwrap();
        assert!(w.constraint_gap < 1e-9 * 300.0);
        let n_hat: f64 = w.weights.iter().sum();
        assert!((n_hat - 300.0).abs() < 1e-9);
    }

    #[test]
    fn constraint_gap_of_ht_weights_is_positive() {
        let z = unif(25, 4);
        let basis = BSplineBasis::new(KnotVector::new(2, vec![0.3, 0.6], 0.0, 1.0).unwrap());
        let rows = basis.basis_matrix(&z);
        let t_b = vec![40.0, 70.0, 90.0, 50.0];
        let d = vec![10.0; 25];
        assert!(verify_constraints(&d, &rows, &t_b) > 0.0);

        let w = bspline_weights(&d, &rows, &t_b, None).unwrap();
        assert!(w.constraint_gap <= 1e-8 * 250.0);
        let mut bumped = w.weights.clone();
        let delta = 0.37;
        bumped[3] += delta;
        let gap = verify_constraints(&bumped, &rows, &t_b);
        let max_b = rows.row(3).iter().cloned().fold(0.0, f64::max);
        assert!(gap <= w.constraint_gap + delta * max_b + 1e-12);
    }

    #[test]
    fn ridge_is_opt_in() {
        let d = vec![2.0; 6];
        let rows = linear_design(&[1.5; 6]);
        let opts = CalibrationOptions { ridge: Some(1e-3) };
        let w = calibrate(&d, &rows, &[12.0, 18.0], None, Strategy::LinearGreg, opts).unwrap();
        assert_eq!(w.weights.len(), 6);
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("LinearGREG".parse::<Strategy>().unwrap(), Strategy::LinearGreg);
        assert!("raking".parse::<Strategy>().is_err());
    }
}
