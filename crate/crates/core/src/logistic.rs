//! Weighted logistic estimating equations for `logit(p) = b0 + b1 x`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intercept and risk-variable coefficient (log odds ratio).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub b0: f64,
    pub b1: f64,
}

impl Beta {
    pub const ZERO: Beta = Beta { b0: 0.0, b1: 0.0 };

    pub fn new(b0: f64, b1: f64) -> Self {
        Self { b0, b1 }
    }

    pub fn eta(&self, x: f64) -> f64 {
        self.b0 + self.b1 * x
    }

    fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.b0, self.b1)
    }

    fn from_vector(v: Vector2<f64>) -> Self {
        Self { b0: v[0], b1: v[1] }
    }
}

/// Logistic function, evaluated without overflow for any finite `eta`.
pub fn mu(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`mu`].
pub fn nu(eta: f64) -> f64 {
    let p = mu(eta);
    p * (1.0 - p)
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `sum_i w_i [y_i eta_i - log(1 + e^{eta_i})]`.
pub fn log_likelihood(y: &[f64], x: &[f64], w: &[f64], beta: Beta) -> f64 {
    y.iter()
        .zip(x)
        .zip(w)
        .map(|((&yi, &xi), &wi)| {
            let eta = beta.eta(xi);
            wi * (yi * eta - softplus(eta))
        })
        .sum()
}

/// `sum_i w_i x_i (y_i - mu(x_i' beta))` with `x_i = (1, x_i)'`.
pub fn score(y: &[f64], x: &[f64], w: &[f64], beta: Beta) -> [f64; 2] {
    let mut s = [0.0; 2];
    for ((&yi, &xi), &wi) in y.iter().zip(x).zip(w) {
        let r = wi * (yi - mu(beta.eta(xi)));
        s[0] += r;
        s[1] += r * xi;
    }
    s
}

/// `-sum_i w_i nu(x_i' beta) x_i x_i'`.
pub fn jacobian(x: &[f64], w: &[f64], beta: Beta) -> [[f64; 2]; 2] {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (&xi, &wi) in x.iter().zip(w) {
        let v = wi * nu(beta.eta(xi));
        a += v;
        b += v * xi;
        c += v * xi * xi;
    }
    [[-a, -b], [-b, -c]]
}

/// Inverse of a 2x2 Jacobian, rejecting numerically singular ones.
pub fn invert_jacobian(j: [[f64; 2]; 2], beta: Beta) -> Result<Matrix2<f64>> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let scale = (j[0][0] * j[1][1]).abs().max(j[0][1] * j[1][0]).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-12 * scale {
        return Err(Error::SingularJacobian {
            b0: beta.b0,
            b1: beta.b1,
        });
    }
    Ok(Matrix2::new(j[1][1], -j[0][1], -j[1][0], j[0][0]) / det)
}

pub fn is_negative_definite(j: [[f64; 2]; 2]) -> bool {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    j[0][0] < 0.0 && det > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Convergence when `max |score| <= tol * sum |w_i|`.
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<Beta>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub beta: Beta,
    pub score_norm: f64,
    pub step_halvings: usize,
    /// The Jacobian was not negative definite at the start of this step.
    pub indefinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: Beta,
    pub jacobian: [[f64; 2]; 2],
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Newton steps that needed halving.
    pub damped_steps: usize,
    pub trace: Vec<IterationRecord>,
}

/// `(logit(ybar_w), 0)` with the weighted mean clamped away from 0 and 1.
pub fn initial_beta(y: &[f64], w: &[f64]) -> Beta {
    let total: f64 = w.iter().sum();
    let ybar = if total != 0.0 {
        y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
    } else {
        0.5
    };
    let p = if ybar.is_finite() { ybar } else { 0.5 }.clamp(1e-6, 1.0 - 1e-6);
    Beta::new(logit(p), 0.0)
}

/// Complete or quasi-complete separation among units with positive weight.
/// For a single regressor plus intercept this is exactly the condition under
/// which the maximum-likelihood estimate does not exist.
pub fn is_separated(y: &[f64], x: &[f64], w: &[f64]) -> bool {
    let (mut max0, mut min0) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut max1, mut min1) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut n0, mut n1) = (0usize, 0usize);
    for ((&yi, &xi), &wi) in y.iter().zip(x).zip(w) {
        if wi <= 0.0 {
            continue;
        }
        if yi == 1.0 {
            n1 += 1;
            max1 = max1.max(xi);
            min1 = min1.min(xi);
        } else {
            n0 += 1;
            max0 = max0.max(xi);
            min0 = min0.min(xi);
        }
    }
    if n0 == 0 || n1 == 0 {
        return true;
    }
    // Ties at a single point separate only if some unit lies strictly beyond it;
    // a constant regressor is collinearity, not separation.
    let up = max0 < min1 || (max0 == min1 && (min0 < max0 || max1 > min1));
    let down = max1 < min0 || (max1 == min0 && (min1 < max1 || max0 > min0));
    up || down
}

fn max_abs_eta(x: &[f64], w: &[f64], beta: Beta) -> f64 {
    x.iter()
        .zip(w)
        .filter(|(_, &wi)| wi != 0.0)
        .map(|(&xi, _)| beta.eta(xi).abs())
        .fold(0.0, f64::max)
}

fn norm_inf(s: [f64; 2]) -> f64 {
    s[0].abs().max(s[1].abs())
}

fn norm2(s: [f64; 2]) -> f64 {
    s[0].hypot(s[1])
}

const ETA_LIMIT: f64 = 30.0;
const MAX_HALVINGS: usize = 40;

/// Newton-Raphson solution of the weighted score equation.
///
/// Each step is `beta_r = beta_{r-1} - J_w(beta_{r-1})^{-1} score(beta_{r-1})`,
/// halved while the log-likelihood decreases. When negative weights make the
/// Jacobian indefinite the score norm is used as the merit function instead.
pub fn fit(y: &[f64], x: &[f64], w: &[f64], options: FitOptions) -> Result<LogisticFit> {
    if y.len() != x.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: y {}, x {}, w {}",
            y.len(),
            x.len(),
            w.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("y must be 0/1, got {bad}")));
    }
    if x.iter().chain(w).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite x or weight".into()));
    }
    if is_separated(y, x, w) {
        return Err(Error::Diverged {
            iterations: 0,
            max_eta: f64::INFINITY,
        });
    }

    let total_w: f64 = w.iter().map(|v| v.abs()).sum();
    let threshold = options.tol * total_w;
    let mut beta = options.init.unwrap_or_else(|| initial_beta(y, w));
    let mut trace = Vec::new();
    let mut damped_steps = 0;
    let mut growing = 0usize;
    let mut last_eta = max_abs_eta(x, w, beta);

    for iteration in 0..=options.max_iter {
        let s = score(y, x, w, beta);
        let s_norm = norm_inf(s);
        let jac = jacobian(x, w, beta);
        if s_norm <= threshold {
            // A root with a singular Jacobian does not identify both coefficients.
            invert_jacobian(jac, beta)?;
            trace.push(IterationRecord {
                iteration,
                beta,
                score_norm: s_norm,
                step_halvings: 0,
                indefinite: !is_negative_definite(jac),
            });
            return Ok(LogisticFit {
                beta,
                jacobian: jac,
                score_norm: s_norm,
                iterations: iteration,
                converged: true,
                damped_steps,
                trace,
            });
        }
        if iteration == options.max_iter {
            return Err(Error::NotConverged {
                iterations: iteration,
                score_norm: s_norm,
            });
        }

        let inv = invert_jacobian(jac, beta)?;
        let step = -(inv * Vector2::new(s[0], s[1]));
        let concave = is_negative_definite(jac);
        let ll0 = log_likelihood(y, x, w, beta);
        let s0 = norm2(s);

        let mut t = 1.0;
        let mut halvings = 0;
        let mut candidate = Beta::from_vector(beta.as_vector() + step);
        while halvings < MAX_HALVINGS {
            let ok = if concave {
                log_likelihood(y, x, w, candidate) >= ll0 - 1e-12 * ll0.abs()
            } else {
                norm2(score(y, x, w, candidate)) < s0
            };
            if ok {
                break;
            }
            t *= 0.5;
            halvings += 1;
            candidate = Beta::from_vector(beta.as_vector() + step * t);
        }
        if halvings > 0 {
            damped_steps += 1;
        }
        trace.push(IterationRecord {
            iteration,
            beta,
            score_norm: s_norm,
            step_halvings: halvings,
            indefinite: !concave,
        });
        beta = candidate;

        if !(beta.b0.is_finite() && beta.b1.is_finite()) {
            return Err(Error::Diverged {
                iterations: iteration + 1,
                max_eta: f64::INFINITY,
            });
        }
        let eta = max_abs_eta(x, w, beta);
        growing = if eta > ETA_LIMIT && eta > last_eta { growing + 1 } else { 0 };
        if growing >= 3 {
            return Err(Error::Diverged {
                iterations: iteration + 1,
                max_eta: eta,
            });
        }
        last_eta = eta;
    }
    unreachable!("loop returns on convergence or at max_iter")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(n00: usize, n01: usize, n10: usize, n11: usize) -> (Vec<f64>, Vec<f64>) {
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (xv, yv, n) in [(0.0, 0.0, n00), (0.0, 1.0, n01), (1.0, 0.0, n10), (1.0, 1.0, n11)] {
            for _ in 0..n {
                x.push(xv);
                y.push(yv);
            }
        }
        (y, x)
    }

    #[test]
    fn mu_values() {
        assert_eq!(mu(0.0), 0.5);
        assert!((mu(710.0) - 1.0).abs() < 1e-15);
        assert!(mu(-710.0) >= 0.0 && mu(-710.0) < 1e-300);
        for eta in [-40.0, -3.2, -0.1, 0.7, 5.0, 33.0] {
            assert!((mu(eta) + mu(-eta) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_zero_score_and_jacobian() {
        let (y, x) = cells(3, 2, 1, 4);
        let w = vec![0.0; y.len()];
        assert_eq!(score(&y, &x, &w, Beta::new(0.3, -0.2)), [0.0, 0.0]);
        assert_eq!(jacobian(&x, &w, Beta::new(0.3, -0.2)), [[-0.0, -0.0], [-0.0, -0.0]]);
    }

    #[test]
    fn jacobian_at_zero_for_binary_x() {
        let (_, x) = cells(5, 7, 3, 6);
        let w = vec![1.0; x.len()];
        let j = jacobian(&x, &w, Beta::ZERO);
        let (n, n1) = (21.0, 9.0);
        assert_eq!(j, [[-n / 4.0, -n1 / 4.0], [-n1 / 4.0, -n1 / 4.0]]);
    }

    #[test]
    fn cell_count_closed_form() {
        let (y, x) = cells(20, 10, 10, 20);
        let w = vec![1.0; y.len()];
        let f = fit(&y, &x, &w, FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!((f.beta.b1 - 4f64.ln()).abs() < 1e-8);
        assert!((f.beta.b0 - 0.5f64.ln()).abs() < 1e-8);
        assert!(is_negative_definite(f.jacobian));
        let s = score(&y, &x, &w, f.beta);
        assert!(norm_inf(s) <= 1e-10 * 60.0);
    }

    #[test]
    fn complete_separation_is_reported() {
        let x = vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let y = x.clone();
        let w = vec![1.0; 6];
        assert!(matches!(
            fit(&y, &x, &w, FitOptions::default()),
            Err(Error::Diverged { .. })
        ));
        let ones = vec![1.0; 6];
        assert!(matches!(
            fit(&ones, &x, &w, FitOptions::default()),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn constant_x_is_singular() {
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0];
        let x = vec![2.0; 5];
        let r = fit(&y, &x, &[1.0; 5], FitOptions::default());
        assert!(matches!(r, Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn weight_scale_invariance() {
        let (y, x) = cells(13, 8, 5, 11);
        let w: Vec<f64> = (0..y.len()).map(|i| 1.0 + (i % 5) as f64 * 0.3).collect();
        let a = fit(&y, &x, &w, FitOptions::default()).unwrap();
        let w7: Vec<f64> = w.iter().map(|v| v * 7.0).collect();
        let b = fit(&y, &x, &w7, FitOptions::default()).unwrap();
        assert!((a.beta.b1 - b.beta.b1).abs() < 1e-9);
        assert!((a.beta.b0 - b.beta.b0).abs() < 1e-9);
    }

    #[test]
    fn too_few_iterations_is_not_converged() {
        let (y, x) = cells(20, 10, 10, 20);
        let w = vec![1.0; y.len()];
        let opts = FitOptions {
            max_iter: 1,
            ..FitOptions::default()
        };
        assert!(matches!(fit(&y, &x, &w, opts), Err(Error::NotConverged { .. })));
    }
}
