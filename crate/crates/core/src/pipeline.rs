//! End-to-end estimation of the odds ratio under each weighting strategy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, KnotVector};
use crate::calibration::{calibrate, linear_design, CalibrationOptions, CalibrationWeights, Strategy};
use crate::design::{ht_weights, Design};
use crate::error::{Error, Result};
use crate::frame::SurveyDataset;
use crate::logistic::{self, FitOptions, IterationRecord};
use crate::oddsratio::{
    ci_or, linearized, or_from_beta, sandwich_variance, variance_beta1, LinearizedVariables,
    OrInterval, VarianceReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub knots: usize,
    pub degree: usize,
    pub alpha: f64,
    pub strategies: Vec<Strategy>,
    pub fit: FitOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            knots: 15,
            degree: 3,
            alpha: 0.05,
            strategies: Strategy::ALL.to_vec(),
            fit: FitOptions::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::InvalidArgument("spline degree must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidArgument("no strategy requested".into()));
        }
        Ok(())
    }
}

/// Spline basis with its population totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTotals {
    pub basis: BSplineBasis,
    pub totals: Vec<f64>,
}

/// Population-level auxiliary information used by the calibrated strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryModel {
    pub population_size: f64,
    /// `sum_U z`, needed by linear GREG.
    pub z_total: Option<f64>,
    /// Fails when the frame cannot support the requested basis; only the
    /// B-spline strategy is affected.
    pub spline: std::result::Result<SplineTotals, Error>,
}

impl AuxiliaryModel {
    /// Places knots on the frame and takes exact basis totals.
    pub fn from_frame(z_pop: &[f64], knots: usize, degree: usize) -> Result<Self> {
        if z_pop.is_empty() {
            return Err(Error::InvalidArgument("empty auxiliary frame".into()));
        }
        if z_pop.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite value in auxiliary frame".into()));
        }
        let spline = KnotVector::place(z_pop, knots, degree).map(|kv| {
            let basis = BSplineBasis::new(kv);
            let totals = basis.totals(z_pop);
            SplineTotals { basis, totals }
        });
        Ok(Self {
            population_size: z_pop.len() as f64,
            z_total: Some(z_pop.iter().sum()),
            spline,
        })
    }

    /// Uses published basis totals for a given knot vector. Without an
    /// explicit `z_total` it is recovered from the totals when the degree
    /// allows the basis to reproduce `z`.
    pub fn from_totals(
        knots: KnotVector,
        totals: Vec<f64>,
        population_size: f64,
        z_total: Option<f64>,
    ) -> Result<Self> {
        let basis = BSplineBasis::new(knots);
        if totals.len() != basis.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} basis totals for {} basis functions",
                totals.len(),
                basis.dim()
            )));
        }
        if !(population_size > 0.0) {
            return Err(Error::InvalidArgument("population size must be positive".into()));
        }
        let z_total = z_total.or_else(|| {
            basis
                .greville()
                .map(|g| g.iter().zip(&totals).map(|(a, b)| a * b).sum())
        });
        Ok(Self {
            population_size,
            z_total,
            spline: Ok(SplineTotals { basis, totals }),
        })
    }
}

/// The estimation step at which a strategy failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Basis,
    Weights,
    Fit,
    Linearize,
    Variance,
    Interval,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Step::Basis => "basis",
            Step::Weights => "weights",
            Step::Fit => "fit",
            Step::Linearize => "linearize",
            Step::Variance => "variance",
            Step::Interval => "interval",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub strategy: Strategy,
    pub step: Step,
    pub error: String,
    #[serde(skip)]
    pub source: Option<Error>,
}

impl StepError {
    fn new(strategy: Strategy, step: Step, source: Error) -> Self {
        Self {
            strategy,
            step,
            error: source.to_string(),
            source: Some(source),
        }
    }
}

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed at step {}: {}", self.strategy, self.step, self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub constraint_gap: f64,
    pub negative_weights: usize,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub damped_steps: usize,
    pub gram_condition: Option<f64>,
    pub min_weight: f64,
    pub max_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub beta0: f64,
    pub beta1: f64,
    pub or: f64,
    pub var_beta1: f64,
    pub ci_or: OrInterval,
    /// `1 - var / var_HT` when the HT strategy ran in the same report.
    pub gain_vs_ht: Option<f64>,
    /// Estimated 2x2 covariance of the coefficients.
    pub covariance: [[f64; 2]; 2],
    pub diagnostics: Diagnostics,
    pub trace: Vec<IterationRecord>,
    #[serde(skip)]
    pub weights: Vec<f64>,
    #[serde(skip)]
    pub linearized: Option<LinearizedVariables>,
    #[serde(skip)]
    pub variance: Option<VarianceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyOutcome {
    Estimated(Box<StrategyReport>),
    Failed(StepError),
}

impl StrategyOutcome {
    pub fn strategy(&self) -> Strategy {
        match self {
            StrategyOutcome::Estimated(r) => r.strategy,
            StrategyOutcome::Failed(e) => e.strategy,
        }
    }

    pub fn report(&self) -> Option<&StrategyReport> {
        match self {
            StrategyOutcome::Estimated(r) => Some(r),
            StrategyOutcome::Failed(_) => None,
        }
    }

    pub fn error(&self) -> Option<&StepError> {
        match self {
            StrategyOutcome::Estimated(_) => None,
            StrategyOutcome::Failed(e) => Some(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSummary {
    pub knots: usize,
    pub degree: usize,
    pub num_basis: usize,
    pub collapsed: usize,
    pub interior: Vec<f64>,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrReport {
    pub sample_size: usize,
    pub population_size: usize,
    pub alpha: f64,
    pub basis: Option<KnotSummary>,
    pub strategies: Vec<StrategyOutcome>,
    pub warnings: Vec<String>,
}

impl OrReport {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|o| o.strategy() == strategy)
    }

    pub fn estimate(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.get(strategy).and_then(StrategyOutcome::report)
    }
}

fn check_dataset<D: Design + ?Sized>(data: &SurveyDataset, design: &D) -> Result<()> {
    let n = data.len();
    if data.x.len() != n || data.sample.len() != n || data.z.as_ref().is_some_and(|z| z.len() != n) {
        return Err(Error::InvalidArgument("dataset columns differ in length".into()));
    }
    if n < 2 {
        return Err(Error::DesignTooSmall { n });
    }
    if let Some(bad) = data.y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("y must be 0/1, got {bad}")));
    }
    let z = data.z.iter().flatten();
    if data.x.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite x or z".into()));
    }
    if let Some(&u) = data.sample.units().iter().find(|&&u| u >= design.population_size()) {
        return Err(Error::InvalidArgument(format!(
            "unit {u} outside a population of {}",
            design.population_size()
        )));
    }
    Ok(())
}

/// Sample rows of the calibration variables and their population totals.
type CalibrationTarget = (DMatrix<f64>, Vec<f64>);

/// Calibration rows and totals for a strategy, `None` for HT.
fn calibration_inputs(
    strategy: Strategy,
    data: &SurveyDataset,
    aux: Option<&AuxiliaryModel>,
) -> std::result::Result<Option<CalibrationTarget>, Error> {
    if strategy == Strategy::Ht {
        return Ok(None);
    }
    let aux = aux.ok_or_else(|| {
        Error::InvalidArgument(format!("{strategy} needs population auxiliary information"))
    })?;
    let z = data
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{strategy} needs sample z values")))?;
    match strategy {
        Strategy::LinearGreg => {
            let tz = aux.z_total.ok_or_else(|| {
                Error::InvalidArgument("population total of z is unavailable".into())
            })?;
            Ok(Some((linear_design(z), vec![aux.population_size, tz])))
        }
        Strategy::BSpline => {
            let s = aux.spline.as_ref().map_err(Clone::clone)?;
            Ok(Some((s.basis.basis_matrix(z), s.totals.clone())))
        }
        Strategy::Ht => unreachable!(),
    }
}

fn run_strategy<D: Design + ?Sized>(
    strategy: Strategy,
    data: &SurveyDataset,
    d: &[f64],
    design: &D,
    aux: Option<&AuxiliaryModel>,
    config: &AnalysisConfig,
) -> std::result::Result<StrategyReport, StepError> {
    let fail = |step| move |e| StepError::new(strategy, step, e);

    let inputs = calibration_inputs(strategy, data, aux).map_err(fail(Step::Basis))?;
    let weights = match &inputs {
        None => CalibrationWeights::horvitz_thompson(d),
        Some((rows, totals)) => {
            calibrate(d, rows, totals, None, strategy, CalibrationOptions::default())
                .map_err(fail(Step::Weights))?
        }
    };
    let w = &weights.weights;

    let fit = logistic::fit(&data.y, &data.x, w, config.fit).map_err(fail(Step::Fit))?;
    let lin = linearized(&data.y, &data.x, w, &fit).map_err(fail(Step::Linearize))?;
    let variance = match &inputs {
        None => sandwich_variance(&data.y, &data.x, w, &fit, &data.sample, design),
        Some((rows, _)) => variance_beta1(&lin, d, Some(rows), &data.sample, design, strategy),
    }
    .map_err(fail(Step::Variance))?;
    let ci = ci_or(fit.beta.b1, variance.var_beta1, config.alpha).map_err(fail(Step::Interval))?;

    let (min_weight, max_weight) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(StrategyReport {
        strategy,
        beta0: fit.beta.b0,
        beta1: fit.beta.b1,
        or: or_from_beta(fit.beta),
        var_beta1: variance.var_beta1,
        ci_or: ci,
        gain_vs_ht: None,
        covariance: variance.covariance,
        diagnostics: Diagnostics {
            constraint_gap: weights.constraint_gap,
            negative_weights: weights.negative_weights,
            iterations: fit.iterations,
            converged: fit.converged,
            score_norm: fit.score_norm,
            damped_steps: fit.damped_steps,
            gram_condition: weights.gram_condition,
            min_weight,
            max_weight,
        },
        trace: fit.trace,
        weights: weights.weights,
        linearized: Some(lin),
        variance: Some(variance),
    })
}

/// Runs every requested strategy on one sample. A failing strategy is
/// reported with the step that failed and does not stop the others.
pub fn run<D: Design + ?Sized>(
    data: &SurveyDataset,
    design: &D,
    aux: Option<&AuxiliaryModel>,
    config: &AnalysisConfig,
) -> Result<OrReport> {
    config.validate()?;
    check_dataset(data, design)?;
    let d = ht_weights(&data.sample, design);

    let mut outcomes: Vec<StrategyOutcome> = config
        .strategies
        .iter()
        .map(|&s| match run_strategy(s, data, &d, design, aux, config) {
            Ok(r) => StrategyOutcome::Estimated(Box::new(r)),
            Err(e) => StrategyOutcome::Failed(e),
        })
        .collect();

    let var_ht = outcomes
        .iter()
        .filter_map(StrategyOutcome::report)
        .find(|r| r.strategy == Strategy::Ht)
        .map(|r| r.var_beta1);
    if let Some(v) = var_ht.filter(|&v| v > 0.0) {
        for o in &mut outcomes {
            if let StrategyOutcome::Estimated(r) = o {
                r.gain_vs_ht = Some(1.0 - r.var_beta1 / v);
            }
        }
    }

    let mut warnings = Vec::new();
    let basis = aux.and_then(|a| a.spline.as_ref().ok()).map(|s| {
        let kv = s.basis.knots();
        KnotSummary {
            knots: kv.interior().len(),
            degree: kv.degree(),
            num_basis: s.basis.dim(),
            collapsed: kv.collapsed(),
            interior: kv.interior().to_vec(),
            low: kv.low(),
            high: kv.high(),
        }
    });
    if let Some(b) = basis.as_ref().filter(|b| b.collapsed > 0) {
        warnings.push(format!(
            "{} tied knot(s) collapsed; basis has {} functions",
            b.collapsed, b.num_basis
        ));
    }
    for r in outcomes.iter().filter_map(StrategyOutcome::report) {
        if r.diagnostics.negative_weights > 0 {
            warnings.push(format!(
                "{}: {} negative calibration weight(s)",
                r.strategy, r.diagnostics.negative_weights
            ));
        }
    }

    Ok(OrReport {
        sample_size: data.len(),
        population_size: design.population_size(),
        alpha: config.alpha,
        basis,
        strategies: outcomes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Srswor;
    use crate::frame::PopulationFrame;

    fn small_population() -> PopulationFrame {
        let n = 400;
        let z: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * ((i * 37 % n) as f64 + 0.5) / n as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) % 7 < 3) as u8 as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = logistic::mu(-0.2 + 0.6 * x[i] + 1.5 * z[i] * x[i]);
                (((i * 29 + 3) % 100) as f64 / 100.0 < p) as u8 as f64
            })
            .collect();
        PopulationFrame::new(y, x, z).unwrap()
    }

    #[test]
    fn census_gives_population_fit_and_zero_variance() {
        let pop = small_population();
        let design = Srswor::census(pop.len()).unwrap();
        let sample = design.draw(1);
        let data = pop.sample(&sample);
        let aux = AuxiliaryModel::from_frame(&pop.z, 5, 3).unwrap();
        let report = run(&data, &design, Some(&aux), &AnalysisConfig::default()).unwrap();
        let ones = vec![1.0; pop.len()];
        let pfit = logistic::fit(&pop.y, &pop.x, &ones, FitOptions::default()).unwrap();
        for s in Strategy::ALL {
            let r = report.estimate(s).unwrap();
            assert!((r.beta1 - pfit.beta.b1).abs() < 1e-10, "{s}");
            assert!((r.beta0 - pfit.beta.b0).abs() < 1e-10, "{s}");
            assert!(r.var_beta1.abs() < 1e-20, "{s}: {}", r.var_beta1);
        }
    }

    #[test]
    fn failed_strategy_does_not_stop_others() {
        let pop = small_population();
        let design = Srswor::new(pop.len(), 60).unwrap();
        let mut data = pop.sample(&design.draw(2));
        data.z = None;
        let report = run(&data, &design, None, &AnalysisConfig::default()).unwrap();
        assert!(report.estimate(Strategy::Ht).is_some());
        let e = report.get(Strategy::BSpline).unwrap().error().unwrap();
        assert_eq!(e.step, Step::Basis);
        assert_eq!(report.strategies.len(), 3);
    }

    #[test]
    fn reported_or_is_exp_beta() {
        let pop = small_population();
        let design = Srswor::new(pop.len(), 80).unwrap();
        let data = pop.sample(&design.draw(5));
        let aux = AuxiliaryModel::from_frame(&pop.z, 4, 3).unwrap();
        let report = run(&data, &design, Some(&aux), &AnalysisConfig::default()).unwrap();
        for o in &report.strategies {
            let r = o.report().unwrap();
            assert_eq!(r.or, r.beta1.exp());
        }
    }
}
