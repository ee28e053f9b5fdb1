//! Synthetic populations and Monte Carlo checks of the estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Strategy;
use crate::design::{Design, Srswor};
use crate::error::{Error, Result};
use crate::frame::PopulationFrame;
use crate::logistic::{self, Beta, FitOptions};
use crate::oddsratio::normal_upper_quantile;
use crate::pipeline::{run, AnalysisConfig, AuxiliaryModel, OrReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZModel {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

/// Risk variable given `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XModel {
    /// `P(x = 1 | z) = mu(intercept + slope z)`.
    Binary { intercept: f64, slope: f64 },
    /// `x = intercept + slope z + noise_sd * e`, `e` standard normal.
    Continuous { intercept: f64, slope: f64, noise_sd: f64 },
}

/// Extra term `(slope + slope_by_x x)(z - center)` in the logit that
/// generates `y`. The fitted model still has only `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZLink {
    #[default]
    None,
    Linear {
        center: f64,
        slope: f64,
        slope_by_x: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(rename = "N")]
    pub population_size: usize,
    pub beta_true: Beta,
    pub z_model: ZModel,
    pub x_model: XModel,
    #[serde(default)]
    pub link: ZLink,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 100 {
            return Err(Error::InvalidArgument(format!(
                "population size must be at least 100, got {}",
                self.population_size
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self.z_model {
            ZModel::Uniform { low, high } => finite(&[low, high]) && low < high,
            ZModel::Normal { mean, sd } => finite(&[mean, sd]) && sd > 0.0,
        } && match self.x_model {
            XModel::Binary { intercept, slope } => finite(&[intercept, slope]),
            XModel::Continuous {
                intercept,
                slope,
                noise_sd,
            } => finite(&[intercept, slope, noise_sd]) && noise_sd >= 0.0,
        } && match self.link {
            ZLink::None => true,
            ZLink::Linear {
                center,
                slope,
                slope_by_x,
            } => finite(&[center, slope, slope_by_x]),
        } && finite(&[self.beta_true.b0, self.beta_true.b1]);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid population model parameters".into()))
        }
    }
}

/// Draws a population frame; deterministic in `spec.seed`.
pub fn generate_population(spec: &PopulationSpec) -> Result<PopulationFrame> {
    spec.validate()?;
    let n = spec.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let unit = Uniform::new(0.0, 1.0).expect("unit interval");

    let z: Vec<f64> = match spec.z_model {
        ZModel::Uniform { low, high } => {
            let u = Uniform::new(low, high).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..n).map(|_| u.sample(&mut rng)).collect()
        }
        ZModel::Normal { mean, sd } => (0..n)
            .map(|_| mean + sd * std_normal.sample(&mut rng))
            .collect(),
    };
    let x: Vec<f64> = z
        .iter()
        .map(|&zi| match spec.x_model {
            XModel::Binary { intercept, slope } => {
                let p = logistic::mu(intercept + slope * zi);
                f64::from(u8::from(unit.sample(&mut rng) < p))
            }
            XModel::Continuous {
                intercept,
                slope,
                noise_sd,
            } => intercept + slope * zi + noise_sd * std_normal.sample(&mut rng),
        })
        .collect();
    let y: Vec<f64> = z
        .iter()
        .zip(&x)
        .map(|(&zi, &xi)| {
            let extra = match spec.link {
                ZLink::None => 0.0,
                ZLink::Linear {
                    center,
                    slope,
                    slope_by_x,
                } => (slope + slope_by_x * xi) * (zi - center),
            };
            let p = logistic::mu(spec.beta_true.eta(xi) + extra);
            f64::from(u8::from(unit.sample(&mut rng) < p))
        })
        .collect();
    PopulationFrame::new(y, x, z)
}

/// A complete Monte Carlo experiment, as read from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(rename = "N")]
    pub population_size: usize,
    #[serde(rename = "n")]
    pub sample_size: usize,
    #[serde(rename = "R")]
    pub replicates: usize,
    /// Seed of the replicate draws.
    pub seed: u64,
    /// Seed of the population; defaults to `seed`.
    #[serde(default)]
    pub population_seed: Option<u64>,
    pub beta_true: Beta,
    pub z_model: ZModel,
    pub x_model: XModel,
    #[serde(default)]
    pub link: ZLink,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(rename = "K", default = "default_knots")]
    pub knots: usize,
    #[serde(rename = "m", default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_knots() -> usize {
    15
}

fn default_degree() -> usize {
    3
}

fn default_alpha() -> f64 {
    0.05
}

pub const BUILTIN_SPECS: [&str; 2] = ["labor-like", "chis-like"];

impl SimulationSpec {
    /// Built-in experiments. `labor-like`: both `x` and `y` depend on `z`, with
    /// a `z` effect on `y` only in the `x = 1` group, so the auxiliary variable
    /// predicts the linearized variable nonlinearly. `chis-like`: `z` is
    /// independent of `(x, y)`.
    pub fn builtin(name: &str) -> Option<Self> {
        let uniform = ZModel::Uniform {
            low: -1.0,
            high: 1.0,
        };
        match name {
            "labor-like" => Some(Self {
                population_size: 5000,
                sample_size: 250,
                replicates: 2000,
                seed: 12345,
                population_seed: Some(1),
                beta_true: Beta::new(0.0, 0.5),
                z_model: uniform,
                x_model: XModel::Binary {
                    intercept: -0.3,
                    slope: 2.0,
                },
                link: ZLink::Linear {
                    center: 0.5,
                    slope: 0.0,
                    slope_by_x: 12.0,
                },
                strategies: all_strategies(),
                knots: 5,
                degree: 3,
                alpha: 0.05,
            }),
            "chis-like" => Some(Self {
                population_size: 5000,
                sample_size: 250,
                replicates: 2000,
                seed: 12345,
                population_seed: Some(1),
                beta_true: Beta::new(-0.3, std::f64::consts::LN_2),
                z_model: uniform,
                x_model: XModel::Binary {
                    intercept: 0.3f64.ln() - 0.7f64.ln(),
                    slope: 0.0,
                },
                link: ZLink::None,
                strategies: all_strategies(),
                knots: 15,
                degree: 3,
                alpha: 0.05,
            }),
            _ => None,
        }
    }

    pub fn population(&self) -> PopulationSpec {
        PopulationSpec {
            population_size: self.population_size,
            beta_true: self.beta_true,
            z_model: self.z_model,
            x_model: self.x_model,
            link: self.link,
            seed: self.population_seed.unwrap_or(self.seed),
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            knots: self.knots,
            degree: self.degree,
            alpha: self.alpha,
            strategies: self.strategies.clone(),
            ..AnalysisConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.population().validate()?;
        self.analysis().validate()?;
        if self.replicates < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 replicates, got {}",
                self.replicates
            )));
        }
        Srswor::new(self.population_size, self.sample_size)?;
        if self.sample_size < 2 {
            return Err(Error::DesignTooSmall { n: self.sample_size });
        }
        Ok(())
    }

    /// Generates the population and runs the experiment.
    pub fn run(&self) -> Result<McResult> {
        self.validate()?;
        let frame = generate_population(&self.population())?;
        let design = Srswor::new(self.population_size, self.sample_size)?;
        monte_carlo(&frame, &design, &self.analysis(), self.replicates, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStrategySummary {
    pub strategy: Strategy,
    pub successes: usize,
    pub failures: usize,
    pub mean_beta1: f64,
    /// Mean of `b1_hat` minus the population coefficient.
    pub bias: f64,
    pub bias_se: f64,
    pub empirical_var_beta1: f64,
    pub mean_estimated_var: f64,
    /// `mean_estimated_var / empirical_var_beta1`; absent when the latter is 0.
    pub variance_ratio: Option<f64>,
    pub coverage: f64,
    /// `1 - empirical var / empirical HT var`.
    pub empirical_gain_vs_ht: Option<f64>,
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    #[serde(rename = "R")]
    pub replicates: usize,
    #[serde(rename = "N")]
    pub population_size: usize,
    #[serde(rename = "n")]
    pub sample_size: usize,
    pub seed: u64,
    pub alpha: f64,
    pub knots: usize,
    pub degree: usize,
    pub population_beta: Beta,
    pub population_or: f64,
    pub strategies: Vec<McStrategySummary>,
}

impl McResult {
    pub fn get(&self, strategy: Strategy) -> Option<&McStrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// Replicate outcome for one strategy: `(b1_hat, var_hat, covered)` or an error.
type Draw = std::result::Result<(f64, f64, bool), String>;

/// Slack for intervals of zero width, so that a census estimate equal to
/// the population value up to rounding counts as covered.
const COVERAGE_SLACK: f64 = 1e-9;

fn one_replicate(
    frame: &PopulationFrame,
    design: &Srswor,
    aux: &AuxiliaryModel,
    config: &AnalysisConfig,
    seed: u64,
    replicate: usize,
) -> Result<OrReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let sample = design.draw_with(&mut rng);
    run(&frame.sample(&sample), design, Some(aux), config)
}

/// Estimate, variance and coverage indicator per strategy of one replicate.
fn score(report: Result<OrReport>, strategies: usize, target: f64, z_crit: f64) -> Vec<Draw> {
    match report {
        Err(e) => vec![Err(e.to_string()); strategies],
        Ok(report) => report
            .strategies
            .iter()
            .map(|o| match (o.report(), o.error()) {
                (Some(r), _) => {
                    let half = z_crit * r.var_beta1.sqrt();
                    let slack = COVERAGE_SLACK * target.abs().max(1.0);
                    Ok((r.beta1, r.var_beta1, (r.beta1 - target).abs() <= half + slack))
                }
                (None, Some(e)) => Err(e.to_string()),
                (None, None) => unreachable!(),
            })
            .collect(),
    }
}

fn summarize(strategy: Strategy, draws: &[&Draw], target: f64, total: usize) -> McStrategySummary {
    let ok: Vec<(f64, f64, bool)> = draws.iter().filter_map(|d| d.as_ref().ok().copied()).collect();
    let first_failure = draws.iter().find_map(|d| d.as_ref().err().cloned());
    let k = ok.len() as f64;
    let mean_beta1 = ok.iter().map(|d| d.0).sum::<f64>() / k;
    let empirical = if ok.len() > 1 {
        ok.iter().map(|d| (d.0 - mean_beta1).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        f64::NAN
    };
    let mean_estimated_var = ok.iter().map(|d| d.1).sum::<f64>() / k;
    let coverage = ok.iter().filter(|d| d.2).count() as f64 / k;
    McStrategySummary {
        strategy,
        successes: ok.len(),
        failures: total - ok.len(),
        mean_beta1,
        bias: mean_beta1 - target,
        bias_se: (empirical / k).sqrt(),
        empirical_var_beta1: empirical,
        mean_estimated_var,
        variance_ratio: (empirical > 0.0).then(|| mean_estimated_var / empirical),
        coverage,
        empirical_gain_vs_ht: None,
        first_failure,
    }
}

/// `R` independent SRSWOR samples from `frame`, each analysed with
/// [`run`]. Coverage is measured against the population fit of `b1`.
///
/// Replicate `r` draws from stream `r` of a generator seeded with `seed`, so
/// results do not depend on scheduling. Fails if more than 5% of the
/// replicates of any strategy fail.
pub fn monte_carlo(
    frame: &PopulationFrame,
    design: &Srswor,
    config: &AnalysisConfig,
    replicates: usize,
    seed: u64,
) -> Result<McResult> {
    config.validate()?;
    if replicates < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 replicates, got {replicates}"
        )));
    }
    if design.population_size() != frame.len() {
        return Err(Error::InvalidArgument(format!(
            "design population {} differs from frame size {}",
            design.population_size(),
            frame.len()
        )));
    }
    let ones = vec![1.0; frame.len()];
    let population_fit = logistic::fit(&frame.y, &frame.x, &ones, FitOptions::default())?;
    let target = population_fit.beta.b1;
    let aux = AuxiliaryModel::from_frame(&frame.z, config.knots, config.degree)?;
    let z_crit = normal_upper_quantile(config.alpha / 2.0);

    let draws: Vec<Vec<Draw>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let report = one_replicate(frame, design, &aux, config, seed, r);
            score(report, config.strategies.len(), target, z_crit)
        })
        .collect();

    let mut strategies = Vec::with_capacity(config.strategies.len());
    for (j, &s) in config.strategies.iter().enumerate() {
        let column: Vec<&Draw> = draws.iter().map(|d| &d[j]).collect();
        let summary = summarize(s, &column, target, replicates);
        if summary.failures * 20 > replicates {
            return Err(Error::TooManyFailures {
                strategy: s.to_string(),
                failed: summary.failures,
                total: replicates,
                first: summary.first_failure.unwrap_or_default(),
            });
        }
        strategies.push(summary);
    }
    let ht_var = strategies
        .iter()
        .find(|s| s.strategy == Strategy::Ht)
        .map(|s| s.empirical_var_beta1)
        .filter(|&v| v > 0.0);
    if let Some(v) = ht_var {
        for s in &mut strategies {
            s.empirical_gain_vs_ht = Some(1.0 - s.empirical_var_beta1 / v);
        }
    }

    Ok(McResult {
        replicates,
        population_size: frame.len(),
        sample_size: design.sample_size(),
        seed,
        alpha: config.alpha,
        knots: config.knots,
        degree: config.degree,
        population_beta: population_fit.beta,
        population_or: population_fit.beta.b1.exp(),
        strategies,
    })
}

/// Draws a uniformly random seed for runs where none was supplied.
pub fn fresh_seed() -> u64 {
    rand::rng().random()
}
