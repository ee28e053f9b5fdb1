//! Sampling designs, Horvitz-Thompson totals and their variances.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First- and second-order inclusion probabilities of a sampling design.
///
/// Units are labelled `0..N`. Estimators only talk to this trait, so other
/// designs can be added without touching them.
pub trait Design: Sync {
    fn population_size(&self) -> usize;

    fn sample_size(&self) -> usize;

    /// `pi_i`.
    fn inclusion(&self, unit: usize) -> f64;

    /// `pi_ij`, with `pi_ii = pi_i`.
    fn joint_inclusion(&self, a: usize, b: usize) -> f64;

    /// Fixed-size designs admit the Sen-Yates-Grundy form.
    fn is_fixed_size(&self) -> bool {
        true
    }

    /// Design covariance of the HT totals of `a` and `b` given values on the
    /// whole population. Defaults to the double sum; designs with a closed
    /// form may override it.
    fn population_covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        ht_covariance_population(a, b, self)
    }
}

/// Simple random sampling without replacement of `n` out of `N` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Srswor {
    population: usize,
    sample: usize,
}

impl Srswor {
    pub fn new(population: usize, sample: usize) -> Result<Self> {
        if sample == 0 || sample > population {
            return Err(Error::InvalidArgument(format!(
                "SRSWOR needs 1 <= n <= N, got n = {sample}, N = {population}"
            )));
        }
        Ok(Self { population, sample })
    }

    pub fn census(population: usize) -> Result<Self> {
        Self::new(population, population)
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.sample as f64 / self.population as f64
    }

    pub fn draw(&self, seed: u64) -> SampleIndex {
        self.draw_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniformly random size-`n` subset, returned in increasing label order.
    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleIndex {
        let mut units = index::sample(rng, self.population, self.sample).into_vec();
        units.sort_unstable();
        SampleIndex { units }
    }

    /// `N^2 (1 - f) s^2 / n` with `s^2` the sample variance of `values`.
    pub fn variance_estimate_closed_form(&self, values: &[f64]) -> Result<f64> {
        if values.len() < 2 {
            return Err(Error::DesignTooSmall { n: values.len() });
        }
        let n = self.sample as f64;
        let big_n = self.population as f64;
        Ok(big_n * big_n * (1.0 - n / big_n) * sample_variance(values) / n)
    }
}

impl Design for Srswor {
    fn population_size(&self) -> usize {
        self.population
    }

    fn sample_size(&self) -> usize {
        self.sample
    }

    fn inclusion(&self, _unit: usize) -> f64 {
        self.sampling_fraction()
    }

    fn joint_inclusion(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.sampling_fraction();
        }
        let n = self.sample as f64;
        let big_n = self.population as f64;
        if self.population == 1 {
            return 1.0;
        }
        n * (n - 1.0) / (big_n * (big_n - 1.0))
    }

    /// `N^2 (1 - f) S_ab / n` with `S_ab` the population covariance.
    fn population_covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        let big_n = self.population as f64;
        let n = self.sample as f64;
        if self.population < 2 {
            return 0.0;
        }
        big_n * big_n * (1.0 - n / big_n) * covariance(a, b) / n
    }
}

/// Distinct unit labels drawn from `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIndex {
    units: Vec<usize>,
}

impl SampleIndex {
    pub fn new(mut units: Vec<usize>) -> Result<Self> {
        units.sort_unstable();
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate unit in sample".into()));
        }
        Ok(Self { units })
    }

    /// Labels `0..n`, for data that arrive without population labels.
    pub fn first(n: usize) -> Self {
        Self {
            units: (0..n).collect(),
        }
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Sampling weights `d_i = 1 / pi_i`.
pub fn ht_weights<D: Design + ?Sized>(sample: &SampleIndex, design: &D) -> Vec<f64> {
    sample
        .units()
        .iter()
        .map(|&u| 1.0 / design.inclusion(u))
        .collect()
}

/// `sum_{i in s} v_i / pi_i`.
pub fn ht_total<D: Design + ?Sized>(values: &[f64], sample: &SampleIndex, design: &D) -> f64 {
    values
        .iter()
        .zip(sample.units())
        .map(|(v, &u)| v / design.inclusion(u))
        .sum()
}

/// Componentwise HT totals of per-unit vectors.
pub fn ht_total_vectors<D: Design + ?Sized>(
    values: &[Vec<f64>],
    sample: &SampleIndex,
    design: &D,
) -> Vec<f64> {
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (v, &u) in values.iter().zip(sample.units()) {
        let d = 1.0 / design.inclusion(u);
        for (o, x) in out.iter_mut().zip(v) {
            *o += x * d;
        }
    }
    out
}

fn check_sample(len: usize, sample: &SampleIndex) -> Result<()> {
    if len != sample.len() {
        return Err(Error::InvalidArgument(format!(
            "{len} values for a sample of {}",
            sample.len()
        )));
    }
    if len < 2 {
        return Err(Error::DesignTooSmall { n: len });
    }
    Ok(())
}

/// Estimated design covariance of two HT totals. Uses the Sen-Yates-Grundy
/// rearrangement for fixed-size designs, the raw double sum otherwise.
pub fn ht_covariance_estimate<D: Design + ?Sized>(
    a: &[f64],
    b: &[f64],
    sample: &SampleIndex,
    design: &D,
) -> Result<f64> {
    check_sample(a.len(), sample)?;
    check_sample(b.len(), sample)?;
    if !design.is_fixed_size() {
        return ht_covariance_estimate_double_sum(a, b, sample, design);
    }
    let units = sample.units();
    let pi: Vec<f64> = units.iter().map(|&u| design.inclusion(u)).collect();
    let ea: Vec<f64> = a.iter().zip(&pi).map(|(v, p)| v / p).collect();
    let eb: Vec<f64> = b.iter().zip(&pi).map(|(v, p)| v / p).collect();
    let mut acc = 0.0;
    for i in 0..units.len() {
        for j in (i + 1)..units.len() {
            let pij = design.joint_inclusion(units[i], units[j]);
            if pij <= 0.0 {
                return Err(Error::DesignTooSmall { n: units.len() });
            }
            let delta = (pi[i] * pi[j] - pij) / pij;
            acc += delta * (ea[i] - ea[j]) * (eb[i] - eb[j]);
        }
    }
    Ok(acc)
}

/// All pairwise estimated covariances of the HT totals of `columns`, in one
/// pass over sample pairs (Sen-Yates-Grundy form).
pub fn ht_covariance_matrix_estimate<D: Design + ?Sized>(
    columns: &[&[f64]],
    sample: &SampleIndex,
    design: &D,
) -> Result<Vec<Vec<f64>>> {
    for c in columns {
        check_sample(c.len(), sample)?;
    }
    let k = columns.len();
    if !design.is_fixed_size() {
        let mut out = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let v = ht_covariance_estimate_double_sum(columns[a], columns[b], sample, design)?;
                out[a][b] = v;
                out[b][a] = v;
            }
        }
        return Ok(out);
    }
    let units = sample.units();
    let pi: Vec<f64> = units.iter().map(|&u| design.inclusion(u)).collect();
    let expanded: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| c.iter().zip(&pi).map(|(v, p)| v / p).collect())
        .collect();
    let mut acc = vec![vec![0.0; k]; k];
    let mut diff = vec![0.0; k];
    for i in 0..units.len() {
        for j in (i + 1)..units.len() {
            let pij = design.joint_inclusion(units[i], units[j]);
            if pij <= 0.0 {
                return Err(Error::DesignTooSmall { n: units.len() });
            }
            let delta = (pi[i] * pi[j] - pij) / pij;
            for (a, e) in expanded.iter().enumerate() {
                diff[a] = e[i] - e[j];
            }
            for (a, (row, &da)) in acc.iter_mut().zip(&diff).enumerate() {
                for (v, &db) in row.iter_mut().zip(&diff).skip(a) {
                    *v += delta * da * db;
                }
            }
        }
    }
    let upper = acc.clone();
    for (a, row) in acc.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate().take(a) {
            *v = upper[b][a];
        }
    }
    Ok(acc)
}

/// Estimated variance of `sum_s v_i / pi_i`, nonnegative for fixed-size designs.
pub fn ht_variance_estimate<D: Design + ?Sized>(
    values: &[f64],
    sample: &SampleIndex,
    design: &D,
) -> Result<f64> {
    ht_covariance_estimate(values, values, sample, design)
}

/// `sum_s sum_s (pi_ij - pi_i pi_j) / pi_ij * a_i / pi_i * b_j / pi_j`.
pub fn ht_covariance_estimate_double_sum<D: Design + ?Sized>(
    a: &[f64],
    b: &[f64],
    sample: &SampleIndex,
    design: &D,
) -> Result<f64> {
    check_sample(a.len(), sample)?;
    check_sample(b.len(), sample)?;
    let units = sample.units();
    let mut acc = 0.0;
    for (i, &ui) in units.iter().enumerate() {
        let pi_i = design.inclusion(ui);
        for (j, &uj) in units.iter().enumerate() {
            let pi_j = design.inclusion(uj);
            let pij = design.joint_inclusion(ui, uj);
            if pij <= 0.0 {
                return Err(Error::DesignTooSmall { n: units.len() });
            }
            acc += (pij - pi_i * pi_j) / pij * (a[i] / pi_i) * (b[j] / pi_j);
        }
    }
    Ok(acc)
}

pub fn ht_variance_estimate_double_sum<D: Design + ?Sized>(
    values: &[f64],
    sample: &SampleIndex,
    design: &D,
) -> Result<f64> {
    ht_covariance_estimate_double_sum(values, values, sample, design)
}

/// `sum_U sum_U (pi_ij - pi_i pi_j) a_i / pi_i * b_j / pi_j` by direct summation.
pub fn ht_covariance_population<D: Design + ?Sized>(a: &[f64], b: &[f64], design: &D) -> f64 {
    let pi: Vec<f64> = (0..a.len()).map(|u| design.inclusion(u)).collect();
    let mut acc = 0.0;
    for i in 0..a.len() {
        let ai = a[i] / pi[i];
        for j in 0..b.len() {
            acc += (design.joint_inclusion(i, j) - pi[i] * pi[j]) * ai * (b[j] / pi[j]);
        }
    }
    acc
}

/// Design variance of the HT total over the full population, by double sum.
pub fn ht_variance_population<D: Design + ?Sized>(values: &[f64], design: &D) -> f64 {
    ht_covariance_population(values, values, design)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Covariance with divisor `len - 1`.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0)
}

pub fn sample_variance(v: &[f64]) -> f64 {
    covariance(v, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 3.0
            })
            .collect()
    }

    #[test]
    fn census_draw_takes_everyone() {
        let d = Srswor::census(17).unwrap();
        assert_eq!(d.draw(3).units(), (0..17).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn draw_is_deterministic() {
        let d = Srswor::new(1000, 40).unwrap();
        assert_eq!(d.draw(99), d.draw(99));
        assert_ne!(d.draw(99), d.draw(100));
        let s = d.draw(5);
        assert_eq!(s.len(), 40);
        assert!(s.units().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_draw_frequencies_are_uniform() {
        let big_n = 20;
        let d = Srswor::new(big_n, 1).unwrap();
        let reps = 100_000;
        let mut counts = vec![0usize; big_n];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..reps {
            counts[d.draw_with(&mut rng).units()[0]] += 1;
        }
        let p = 1.0 / big_n as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        for c in counts {
            assert!((c as f64 / reps as f64 - p).abs() < 4.5 * se);
        }
    }

    #[test]
    fn census_total_is_exact_and_constant_total_is_nc() {
        let v = lcg_values(30, 1);
        let census = Srswor::census(30).unwrap();
        let t = ht_total(&v, &SampleIndex::first(30), &census);
        assert!((t - v.iter().sum::<f64>()).abs() < 1e-12);

        let d = Srswor::new(300, 30).unwrap();
        let s = d.draw(2);
        let c = vec![2.5; 30];
        assert!((ht_total(&c, &s, &d) - 750.0).abs() < 1e-10);
    }

    #[test]
    fn ht_total_is_unbiased() {
        let big_n = 200;
        let pop = lcg_values(big_n, 11);
        let truth: f64 = pop.iter().sum();
        let d = Srswor::new(big_n, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 10_000;
        let totals: Vec<f64> = (0..reps)
            .map(|_| {
                let s = d.draw_with(&mut rng);
                let v: Vec<f64> = s.units().iter().map(|&u| pop[u]).collect();
                ht_total(&v, &s, &d)
            })
            .collect();
        let se = (sample_variance(&totals) / reps as f64).sqrt();
        assert!((mean(&totals) - truth).abs() < 3.0 * se);
    }

    #[test]
    fn variance_estimate_edge_cases() {
        let d = Srswor::new(100, 10).unwrap();
        let s = d.draw(1);
        assert_eq!(ht_variance_estimate(&[4.0; 10], &s, &d).unwrap(), 0.0);

        let census = Srswor::census(10).unwrap();
        let v = lcg_values(10, 3);
        assert_eq!(ht_variance_estimate(&v, &SampleIndex::first(10), &census).unwrap(), 0.0);

        let one = Srswor::new(10, 1).unwrap();
        assert_eq!(
            ht_variance_estimate(&[1.0], &one.draw(0), &one),
            Err(Error::DesignTooSmall { n: 1 })
        );
    }

    #[test]
    fn variance_estimate_matches_srswor_closed_form() {
        let d = Srswor::new(100, 10).unwrap();
        let s = d.draw(4);
        let v = lcg_values(10, 8);
        // Independent closed form: N^2 (1 - f) s^2 / n, computed by hand.
        let m = v.iter().sum::<f64>() / 10.0;
        let s2 = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 9.0;
        let oracle = 100.0 * 100.0 * (1.0 - 0.1) * s2 / 10.0;
        let syg = ht_variance_estimate(&v, &s, &d).unwrap();
        let raw = ht_variance_estimate_double_sum(&v, &s, &d).unwrap();
        assert!((syg - oracle).abs() <= 1e-10 * oracle);
        assert!((raw - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn covariance_matrix_matches_pairwise() {
        let d = Srswor::new(60, 12).unwrap();
        let s = d.draw(9);
        let a = lcg_values(12, 1);
        let b = lcg_values(12, 2);
        let m = ht_covariance_matrix_estimate(&[&a, &b], &s, &d).unwrap();
        let ab = ht_covariance_estimate_double_sum(&a, &b, &s, &d).unwrap();
        let bb = ht_variance_estimate(&b, &s, &d).unwrap();
        assert!((m[0][1] - ab).abs() < 1e-10 * ab.abs().max(1.0));
        assert!((m[1][0] - m[0][1]).abs() == 0.0);
        assert!((m[1][1] - bb).abs() < 1e-10 * bb);
    }

    #[test]
    fn population_variance_closed_form() {
        let d = Srswor::new(1000, 100).unwrap();
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        // S^2 of 1..N is N(N+1)/12.
        let oracle = 1000.0 * 1000.0 * 0.9 * (1000.0 * 1001.0 / 12.0) / 100.0;
        let direct = ht_variance_population(&v, &d);
        assert!((direct - oracle).abs() <= 1e-10 * oracle);
        assert!((d.population_covariance(&v, &v) - oracle).abs() <= 1e-10 * oracle);

        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        assert!((ht_variance_population(&doubled, &d) - 4.0 * direct).abs() <= 1e-9 * direct);
        assert_eq!(d.population_covariance(&[3.0; 1000], &[3.0; 1000]), 0.0);
    }
}
