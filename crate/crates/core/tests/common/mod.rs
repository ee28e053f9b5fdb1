//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

/// Recursive Cox-de Boor evaluation of all basis functions of order `m`
/// (piecewise degree `m - 1`) on the clamped sequence `seq`. The final
/// nonempty span is closed on the right.
pub fn basis_oracle(seq: &[f64], m: usize, z: f64) -> Vec<f64> {
    let q = seq.len() - m;
    let last_span = (0..seq.len() - 1).rev().find(|&i| seq[i] < seq[i + 1]).unwrap();
    let z = z.clamp(seq[0], seq[seq.len() - 1]);
    (0..q).map(|j| recurse(seq, j, m, z, last_span)).collect()
}

fn recurse(seq: &[f64], i: usize, order: usize, z: f64, last_span: usize) -> f64 {
    if order == 1 {
        let inside = seq[i] <= z && z < seq[i + 1];
        let closing = i == last_span && z == seq[i + 1];
        return if inside || closing { 1.0 } else { 0.0 };
    }
    let p = order - 1;
    let mut v = 0.0;
    let a = seq[i + p] - seq[i];
    if a > 0.0 {
        v += (z - seq[i]) / a * recurse(seq, i, order - 1, z, last_span);
    }
    let b = seq[i + p + 1] - seq[i + 1];
    if b > 0.0 {
        v += (seq[i + p + 1] - z) / b * recurse(seq, i + 1, order - 1, z, last_span);
    }
    v
}

/// `N^2 (1 - n/N) s^2 / n` with `s^2` the divisor-(n-1) sample variance.
pub fn srswor_closed_form(values: &[f64], population: usize) -> f64 {
    let n = values.len() as f64;
    let big_n = population as f64;
    let mean = values.iter().sum::<f64>() / n;
    let s2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    big_n * big_n * (1.0 - n / big_n) * s2 / n
}

/// Weighted 2x2 cell totals `[[n00, n01], [n10, n11]]` indexed by x then y.
pub fn cells(y: &[f64], x: &[f64], w: &[f64]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..y.len() {
        c[x[i] as usize][y[i] as usize] += w[i];
    }
    c
}

/// Closed-form weighted logistic MLE for binary x: cell log-odds.
pub fn binary_logit_mle(c: [[f64; 2]; 2]) -> (f64, f64) {
    let b0 = (c[0][1] / c[0][0]).ln();
    let b1 = (c[1][1] / c[1][0]).ln() - b0;
    (b0, b1)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Minimizer of `sum (w - d)^2 / d` subject to `B' w = t`, from the full
/// KKT system solved by LU.
pub fn kkt_weights(d: &[f64], b: &nalgebra::DMatrix<f64>, t: &[f64]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let (n, q) = (b.nrows(), b.ncols());
    let mut m = DMatrix::zeros(n + q, n + q);
    let mut rhs = DVector::zeros(n + q);
    for i in 0..n {
        m[(i, i)] = 2.0 / d[i];
        rhs[i] = 2.0;
        for j in 0..q {
            m[(i, n + j)] = b[(i, j)];
            m[(n + j, i)] = b[(i, j)];
        }
    }
    for j in 0..q {
        rhs[n + j] = t[j];
    }
    let sol = m.lu().solve(&rhs).expect("KKT system solvable");
    sol.rows(0, n).iter().copied().collect()
}

/// Coefficients of the `d`-weighted least-squares fit of `v` on the columns
/// of `b`, by QR on `sqrt(d)`-scaled rows.
pub fn weighted_ls(b: &nalgebra::DMatrix<f64>, d: &[f64], v: &[f64]) -> nalgebra::DVector<f64> {
    use nalgebra::{DMatrix, DVector};
    let n = b.nrows();
    let a = DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] * d[i].sqrt());
    let rhs = DVector::from_fn(n, |i, _| v[i] * d[i].sqrt());
    let qr = a.qr();
    qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs)).expect("full rank")
}
