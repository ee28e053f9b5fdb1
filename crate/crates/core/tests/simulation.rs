mod common;

use common::cells;
use orcal::calibration::Strategy;
use orcal::design::Srswor;
use orcal::logistic::Beta;
use orcal::simulate::{generate_population, monte_carlo, PopulationSpec, SimulationSpec, XModel, ZLink, ZModel};

fn spec(beta: Beta, x_model: XModel, n: usize, seed: u64) -> PopulationSpec {
    PopulationSpec {
        population_size: n,
        beta_true: beta,
        z_model: ZModel::Normal { mean: 0.0, sd: 1.0 },
        x_model,
        link: ZLink::None,
        seed,
    }
}

#[test]
fn null_model_gives_balanced_outcome() {
    let n = 40_000;
    let pop = generate_population(&spec(
        Beta::new(0.0, 0.0),
        XModel::Continuous {
            intercept: 0.0,
            slope: 1.0,
            noise_sd: 1.0,
        },
        n,
        7,
    ))
    .unwrap();
    let mean = pop.y.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{mean}");
}

#[test]
fn binary_population_odds_ratio_is_near_truth() {
    let n = 40_000;
    let log_or = 4f64.ln();
    let pop = generate_population(&spec(
        Beta::new(-0.5, log_or),
        XModel::Binary {
            intercept: 0.0,
            slope: 0.0,
        },
        n,
        8,
    ))
    .unwrap();
    let c = cells(&pop.y, &pop.x, &vec![1.0; n]);
    let est = (c[1][1] * c[0][0] / (c[1][0] * c[0][1])).ln();
    let se = c.iter().flatten().map(|v| 1.0 / v).sum::<f64>().sqrt();
    assert!((est - log_or).abs() < 3.0 * se, "{est} vs {log_or} (se {se})");
}

#[test]
fn population_is_deterministic_in_seed() {
    let s = spec(
        Beta::new(0.2, 0.7),
        XModel::Binary {
            intercept: 0.1,
            slope: 0.5,
        },
        500,
        21,
    );
    assert_eq!(generate_population(&s).unwrap(), generate_population(&s).unwrap());
    let other = PopulationSpec { seed: 22, ..s };
    assert_ne!(generate_population(&s).unwrap(), generate_population(&other).unwrap());
}

#[test]
fn monte_carlo_does_not_depend_on_thread_count() {
    let sim = SimulationSpec::builtin("labor-like").unwrap();
    let pop = generate_population(&sim.population()).unwrap();
    let design = Srswor::new(pop.len(), sim.sample_size).unwrap();
    let config = sim.analysis();
    let with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo(&pop, &design, &config, 60, 4242).unwrap())
    };
    assert_eq!(with(1), with(4));
}

#[test]
fn calibrated_estimators_are_nearly_unbiased_and_more_efficient() {
    let sim = SimulationSpec::builtin("labor-like").unwrap();
    let pop = generate_population(&sim.population()).unwrap();
    let design = Srswor::new(pop.len(), sim.sample_size).unwrap();
    let mc = monte_carlo(&pop, &design, &sim.analysis(), 800, 777).unwrap();
    for s in &mc.strategies {
        assert_eq!(s.failures, 0);
        assert!(s.bias.abs() < 3.0 * s.bias_se, "{:?}", s);
    }
    let var = |st| mc.get(st).unwrap().empirical_var_beta1;
    assert!(var(Strategy::BSpline) < var(Strategy::LinearGreg));
    assert!(var(Strategy::LinearGreg) < var(Strategy::Ht));
}
