//! Odds-ratio point estimates, linearized variables, plug-in variances and
//! confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bspline::{BSplineBasis, KnotVector};
use crate::calibration::{linear_design, Strategy};
use crate::design::{ht_covariance_matrix_estimate, Design, SampleIndex};
use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::linalg::{weighted_cross, weighted_gram, SpdFactor};
use crate::logistic::{self, invert_jacobian, Beta, FitOptions, LogisticFit};

/// Weighted 2x2 table. `n_xy` indexes the risk variable first, then the response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub n00: f64,
    pub n01: f64,
    pub n10: f64,
    pub n11: f64,
}

impl ContingencyCounts {
    pub fn new(n00: f64, n01: f64, n10: f64, n11: f64) -> Self {
        Self { n00, n01, n10, n11 }
    }

    /// Sums `w_i` over each cell. Requires binary `x` and `y`.
    pub fn from_weighted(y: &[f64], x: &[f64], w: &[f64]) -> Result<Self> {
        if y.len() != x.len() || y.len() != w.len() {
            return Err(Error::InvalidArgument("length mismatch".into()));
        }
        let mut c = Self::new(0.0, 0.0, 0.0, 0.0);
        for ((&yi, &xi), &wi) in y.iter().zip(x).zip(w) {
            let slot = match (binary(xi)?, binary(yi)?) {
                (0, 0) => &mut c.n00,
                (0, _) => &mut c.n01,
                (_, 0) => &mut c.n10,
                _ => &mut c.n11,
            };
            *slot += wi;
        }
        Ok(c)
    }

    pub fn cell(&self, x: u8, y: u8) -> f64 {
        match (x, y) {
            (0, 0) => self.n00,
            (0, _) => self.n01,
            (_, 0) => self.n10,
            _ => self.n11,
        }
    }

    pub fn check_positive(&self) -> Result<()> {
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let count = self.cell(x, y);
            if !(count > 0.0) {
                return Err(Error::ZeroCell { x, y, count });
            }
        }
        Ok(())
    }
}

fn binary(v: f64) -> Result<u8> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::InvalidArgument(format!("expected 0/1, got {v}")))
    }
}

pub fn or_from_beta(beta: Beta) -> f64 {
    beta.b1.exp()
}

/// `n00 n11 / (n01 n10)`.
pub fn or_contingency(c: &ContingencyCounts) -> Result<f64> {
    c.check_positive()?;
    Ok(c.n00 * c.n11 / (c.n01 * c.n10))
}

/// Per-unit components of the estimated influence function of `(b0, b1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedVariables {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
}

impl LinearizedVariables {
    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }
}

/// Score contributions `x_i (y_i - mu_i)` with `x_i = (1, x)`.
pub fn score_contributions(y: &[f64], x: &[f64], beta: Beta) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .zip(x)
        .map(|(&yi, &xi)| {
            let r = yi - logistic::mu(beta.eta(xi));
            (r, xi * r)
        })
        .unzip()
}

/// `u_i = -J_w^{-1} x_i (y_i - mu_i)` with the Jacobian evaluated at the fitted
/// coefficients under weights `w`.
pub fn linearized(
    y: &[f64],
    x: &[f64],
    w: &[f64],
    fit: &LogisticFit,
) -> Result<LinearizedVariables> {
    if y.len() != x.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let jac = logistic::jacobian(x, w, fit.beta);
    let inv = invert_jacobian(jac, fit.beta)?;
    let (t0, t1) = score_contributions(y, x, fit.beta);
    let mut u0 = Vec::with_capacity(y.len());
    let mut u1 = Vec::with_capacity(y.len());
    for (a, b) in t0.iter().zip(&t1) {
        u0.push(-(inv[(0, 0)] * a + inv[(0, 1)] * b));
        u1.push(-(inv[(1, 0)] * a + inv[(1, 1)] * b));
    }
    Ok(LinearizedVariables { u0, u1 })
}

/// `u_{i,1}` for binary `x`: the signed reciprocal count of the unit's cell.
pub fn linearized_binary(c: &ContingencyCounts, x: u8, y: u8) -> Result<f64> {
    c.check_positive()?;
    let sign = if x == y { 1.0 } else { -1.0 };
    Ok(sign / c.cell(x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub var_beta1: f64,
    /// Estimated 2x2 covariance of `(b0, b1)`; `var_beta1` is its (2,2) entry.
    pub covariance: [[f64; 2]; 2],
    /// Residuals of `u1` (equal to `u1` when nothing is residualized).
    pub residuals: Vec<f64>,
    /// Coefficients of the `u1` regression on the basis.
    pub theta_hat: Option<Vec<f64>>,
    pub strategy: Strategy,
}

/// Coefficients of the `d`-weighted least-squares fit of `v` on the rows of
/// `basis`, and the residuals.
pub fn residualize(v: &[f64], d: &[f64], basis: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if basis.nrows() != v.len() || d.len() != v.len() {
        return Err(Error::InvalidArgument("basis rows do not match sample".into()));
    }
    let factor = SpdFactor::new(&weighted_gram(basis, d))?;
    let theta: DVector<f64> = factor.solve(&weighted_cross(basis, d, v));
    let fitted = basis * &theta;
    let resid = v.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    Ok((theta.iter().copied().collect(), resid))
}

fn to_array(m: &[Vec<f64>]) -> [[f64; 2]; 2] {
    [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
}

/// HT variance of `b1` from residuals of the linearized variables against
/// `basis` (weighted by `d`). With `basis = None` the linearized variables
/// are used as they are.
pub fn variance_beta1<D: Design + ?Sized>(
    uhat: &LinearizedVariables,
    d: &[f64],
    basis: Option<&DMatrix<f64>>,
    sample: &SampleIndex,
    design: &D,
    strategy: Strategy,
) -> Result<VarianceReport> {
    let (theta_hat, e0, e1) = match basis {
        Some(b) => {
            let (_, e0) = residualize(&uhat.u0, d, b)?;
            let (theta, e1) = residualize(&uhat.u1, d, b)?;
            (Some(theta), e0, e1)
        }
        None => (None, uhat.u0.clone(), uhat.u1.clone()),
    };
    let cov = ht_covariance_matrix_estimate(&[&e0, &e1], sample, design)?;
    let covariance = to_array(&cov);
    Ok(VarianceReport {
        var_beta1: covariance[1][1],
        covariance,
        residuals: e1,
        theta_hat,
        strategy,
    })
}

/// `J^{-1} V_HT(t_hat) J^{-1}` from the sample score contributions.
///
/// Evaluated as the HT covariance of the transformed contributions
/// `-J^{-1} t_i`, which is the same matrix but stays nonnegative definite
/// under rounding.
pub fn sandwich_variance<D: Design + ?Sized>(
    y: &[f64],
    x: &[f64],
    w: &[f64],
    fit: &LogisticFit,
    sample: &SampleIndex,
    design: &D,
) -> Result<VarianceReport> {
    let jac = logistic::jacobian(x, w, fit.beta);
    let inv = invert_jacobian(jac, fit.beta)?;
    let (t0, t1) = score_contributions(y, x, fit.beta);
    let (u0, u1): (Vec<f64>, Vec<f64>) = t0
        .iter()
        .zip(&t1)
        .map(|(a, b)| {
            (
                -(inv[(0, 0)] * a + inv[(0, 1)] * b),
                -(inv[(1, 0)] * a + inv[(1, 1)] * b),
            )
        })
        .unzip();
    let covariance = to_array(&ht_covariance_matrix_estimate(&[&u0, &u1], sample, design)?);
    Ok(VarianceReport {
        var_beta1: covariance[1][1],
        covariance,
        residuals: u1,
        theta_hat: None,
        strategy: Strategy::Ht,
    })
}

/// The literal sandwich `J^{-1} V_HT(t_hat) J^{-1}`, for cross-checking
/// [`sandwich_variance`].
pub fn sandwich_matrix<D: Design + ?Sized>(
    y: &[f64],
    x: &[f64],
    w: &[f64],
    fit: &LogisticFit,
    sample: &SampleIndex,
    design: &D,
) -> Result<[[f64; 2]; 2]> {
    let inv = invert_jacobian(logistic::jacobian(x, w, fit.beta), fit.beta)?;
    let (t0, t1) = score_contributions(y, x, fit.beta);
    let v = ht_covariance_matrix_estimate(&[&t0, &t1], sample, design)?;
    let meat = nalgebra::Matrix2::new(v[0][0], v[0][1], v[1][0], v[1][1]);
    let s = inv * meat * inv.transpose();
    Ok([[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrInterval {
    pub or_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

/// Upper `p` quantile of the standard normal.
pub fn normal_upper_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - p)
}

/// `exp(b1 -/+ z_{alpha/2} sqrt(var))`.
pub fn ci_or(beta1: f64, var_beta1: f64, alpha: f64) -> Result<OrInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(var_beta1 >= 0.0) || !beta1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite beta1 and var >= 0, got {beta1}, {var_beta1}"
        )));
    }
    let half = normal_upper_quantile(alpha / 2.0) * var_beta1.sqrt();
    Ok(OrInterval {
        or_hat: beta1.exp(),
        lo: (beta1 - half).exp(),
        hi: (beta1 + half).exp(),
        alpha,
    })
}

/// Population-level asymptotic variances of `b1` under three weightings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticComparison {
    pub knots: usize,
    pub degree: usize,
    pub num_basis: usize,
    pub collapsed_knots: usize,
    pub beta: Beta,
    pub var_ht: f64,
    pub var_greg: f64,
    pub var_bspline: f64,
    pub gain_greg: f64,
    pub gain_bspline: f64,
    /// Full 2x2 HT sandwich, for diagnostics.
    pub covariance_ht: [[f64; 2]; 2],
}

/// Population fit and linearized variables shared by every basis setting.
#[derive(Debug, Clone)]
pub struct PopulationLinearization {
    pub fit: LogisticFit,
    pub u: LinearizedVariables,
    pub var_ht: f64,
    pub covariance_ht: [[f64; 2]; 2],
    pub var_greg: f64,
}

pub fn population_linearization<D: Design + ?Sized>(
    frame: &PopulationFrame,
    design: &D,
    options: FitOptions,
) -> Result<PopulationLinearization> {
    let ones = vec![1.0; frame.len()];
    let fit = logistic::fit(&frame.y, &frame.x, &ones, options)?;
    let u = linearized(&frame.y, &frame.x, &ones, &fit)?;

    let inv = invert_jacobian(fit.jacobian, fit.beta)?;
    let (t0, t1) = score_contributions(&frame.y, &frame.x, fit.beta);
    let meat = nalgebra::Matrix2::new(
        design.population_covariance(&t0, &t0),
        design.population_covariance(&t0, &t1),
        design.population_covariance(&t1, &t0),
        design.population_covariance(&t1, &t1),
    );
    let s = inv * meat * inv.transpose();

    let (_, e) = residualize(&u.u1, &ones, &linear_design(&frame.z))?;
    Ok(PopulationLinearization {
        var_greg: design.population_covariance(&e, &e),
        var_ht: s[(1, 1)],
        covariance_ht: [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]],
        fit,
        u,
    })
}

/// Asymptotic variance of the B-spline strategy for one `(K, m)` setting,
/// reusing a population linearization.
pub fn bspline_asymptotic_variance<D: Design + ?Sized>(
    frame: &PopulationFrame,
    design: &D,
    lin: &PopulationLinearization,
    knots: usize,
    degree: usize,
) -> Result<AsymptoticComparison> {
    let kv = KnotVector::place(&frame.z, knots, degree)?;
    let collapsed = kv.collapsed();
    let basis = BSplineBasis::new(kv);
    let ones = vec![1.0; frame.len()];
    let (_, e) = residualize(&lin.u.u1, &ones, &basis.basis_matrix(&frame.z))?;
    let var_bspline = design.population_covariance(&e, &e);
    Ok(AsymptoticComparison {
        knots,
        degree,
        num_basis: basis.dim(),
        collapsed_knots: collapsed,
        beta: lin.fit.beta,
        var_ht: lin.var_ht,
        var_greg: lin.var_greg,
        var_bspline,
        gain_greg: 1.0 - lin.var_greg / lin.var_ht,
        gain_bspline: 1.0 - var_bspline / lin.var_ht,
        covariance_ht: lin.covariance_ht,
    })
}

/// HT, linear GREG and B-spline asymptotic variances of `b1` on a full
/// population, with gains `1 - V_alt / V_HT`.
pub fn asymptotic_variance_comparison<D: Design + ?Sized>(
    frame: &PopulationFrame,
    design: &D,
    knots: usize,
    degree: usize,
) -> Result<AsymptoticComparison> {
    let lin = population_linearization(frame, design, FitOptions::default())?;
    bspline_asymptotic_variance(frame, design, &lin, knots, degree)
}
