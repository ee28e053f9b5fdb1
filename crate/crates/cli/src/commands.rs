use std::io::Write;
use std::path::Path;

use orcal::bspline::KnotVector;
use orcal::calibration::Strategy;
use orcal::design::Srswor;
use orcal::frame::{PopulationFrame, SurveyDataset};
use orcal::logistic::FitOptions;
use orcal::oddsratio::{bspline_asymptotic_variance, population_linearization};
use orcal::pipeline::{self, AnalysisConfig, AuxiliaryModel};
use orcal::simulate::{self, SimulationSpec, BUILTIN_SPECS};
use orcal::Error;
use serde::Serialize;

use crate::input::{parse_int_set, parse_list, read_totals, Table};
use crate::{CliError, CompareArgs, EstimateArgs, PopulationArgs, SimulateArgs};

const PI_TOLERANCE: f64 = 1e-6;

fn input(e: Error) -> CliError {
    CliError::Input(e.to_string())
}

fn estimation(e: Error) -> CliError {
    CliError::Estimation(e.to_string())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Input(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Population size from the flags, the pi column, or the auxiliary source.
fn population_size(
    args: &EstimateArgs,
    data: &Table,
    aux_size: Option<f64>,
) -> Result<usize, CliError> {
    let n = data.len();
    let from_pi = if data.has("pi") {
        let pi = data.column("pi")?;
        for (p, line) in pi.iter().zip(&data.lines) {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(CliError::Input(format!(
                    "{}: line {line}: pi must lie in (0, 1], got {p}",
                    data.path
                )));
            }
            if (p - pi[0]).abs() > PI_TOLERANCE * pi[0] {
                return Err(CliError::Input(format!(
                    "{}: line {line}: unequal inclusion probabilities; only SRSWOR is supported",
                    data.path
                )));
            }
        }
        let implied = n as f64 / pi[0];
        if (implied - implied.round()).abs() > PI_TOLERANCE * implied {
            return Err(CliError::Input(format!(
                "{}: pi = {} does not correspond to an integer population size for n = {n}",
                data.path, pi[0]
            )));
        }
        Some(implied.round() as usize)
    } else {
        None
    };
    let aux_size = aux_size.map(|v| v.round() as usize);
    let size = args
        .pop_size
        .or(from_pi)
        .or(aux_size)
        .ok_or_else(|| CliError::Input("population size unknown: pass --pop-size".into()))?;
    if let Some(p) = from_pi.filter(|&p| p != size) {
        return Err(CliError::Input(format!(
            "pi column implies N = {p} but the population size is {size}"
        )));
    }
    if let Some(a) = aux_size.filter(|&a| a != size) {
        return Err(CliError::Input(format!(
            "auxiliary information describes N = {a} units but the population size is {size}"
        )));
    }
    Ok(size)
}

fn auxiliary(args: &EstimateArgs) -> Result<Option<AuxiliaryModel>, CliError> {
    if let Some(frame) = &args.frame {
        let mut t = Table::read(frame, &["z"])?;
        let z = t.take("z")?;
        return AuxiliaryModel::from_frame(&z, args.knots, args.degree)
            .map(Some)
            .map_err(input);
    }
    if let Some(path) = &args.totals {
        let (totals, size) = read_totals(path)?;
        let positions = parse_list(args.knot_positions.as_deref().unwrap_or_default())
            .map_err(|raw| CliError::Input(format!("--knot-positions: '{raw}' is not a number")))?;
        if positions.len() < 2 {
            return Err(CliError::Input(
                "--knot-positions needs at least the two boundaries".into(),
            ));
        }
        let (low, high) = (positions[0], positions[positions.len() - 1]);
        let interior = positions[1..positions.len() - 1].to_vec();
        let kv = KnotVector::new(args.degree, interior, low, high).map_err(input)?;
        return AuxiliaryModel::from_totals(kv, totals, size, args.z_total)
            .map(Some)
            .map_err(input);
    }
    Ok(None)
}

fn dump_basis(path: &Path, aux: &AuxiliaryModel) -> Result<(), CliError> {
    let spline = aux.spline.as_ref().map_err(|e| CliError::Estimation(e.to_string()))?;
    let kv = spline.basis.knots();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["z".to_string()];
    header.extend((1..=spline.basis.dim()).map(|j| format!("B{j}")));
    let io = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    let points = 201;
    for i in 0..points {
        let z = kv.low() + (kv.high() - kv.low()) * i as f64 / (points - 1) as f64;
        let mut row = vec![z.to_string()];
        row.extend(spline.basis.evaluate(z).iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let strategies = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        let mut s = Vec::new();
        for &x in &args.strategies {
            if !s.contains(&x) {
                s.push(x);
            }
        }
        s
    };
    let config = AnalysisConfig {
        knots: args.knots,
        degree: args.degree,
        alpha: args.alpha,
        strategies: strategies.clone(),
        fit: FitOptions::default(),
    };
    config.validate().map_err(input)?;

    let mut data = Table::read(&args.data, &["y", "x", "z", "pi"])?;
    data.column("y")?;
    data.column("x")?;
    data.require_binary("y")?;
    if data.len() < 2 {
        return Err(CliError::Input(format!("{}: need at least 2 data rows", data.path)));
    }
    let calibrated: Vec<Strategy> = strategies.iter().copied().filter(|s| s.uses_auxiliary()).collect();
    if let Some(s) = calibrated.first() {
        if !data.has("z") {
            return Err(CliError::Input(format!(
                "{}: missing column 'z' required by strategy {s}",
                data.path
            )));
        }
        if args.frame.is_none() && args.totals.is_none() {
            return Err(CliError::Input(format!(
                "strategy {s} needs a population frame (--frame) or totals (--totals)"
            )));
        }
    }

    let aux = auxiliary(args)?;
    let big_n = population_size(args, &data, aux.as_ref().map(|a| a.population_size))?;
    let design = Srswor::new(big_n, data.len()).map_err(input)?;
    let dataset = SurveyDataset::new(data.take("y")?, data.take("x")?, data.take("z").ok())
        .map_err(input)?;

    if let (Some(path), Some(a)) = (&args.dump_basis, &aux) {
        dump_basis(path, a)?;
    }

    let report = pipeline::run(&dataset, &design, aux.as_ref(), &config).map_err(input)?;
    write_output(args.output.as_deref(), &to_json(&report))?;
    for w in &report.warnings {
        eprintln!("orcal: warning: {w}");
    }
    let failures: Vec<String> = report
        .strategies
        .iter()
        .filter_map(|o| o.error().map(ToString::to_string))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Estimation(failures.join("; ")))
    }
}

fn load_spec(spec: &str, seed_override: Option<u64>) -> Result<SimulationSpec, CliError> {
    if let Some(s) = SimulationSpec::builtin(spec) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Input(format!(
            "'{spec}' is neither a spec file nor a built-in spec ({})",
            BUILTIN_SPECS.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{spec}: {e}")))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{spec}: line {}: {e}", e.line())))?;
    if let Some(obj) = value.as_object_mut() {
        if !obj.contains_key("seed") && seed_override.is_none() {
            let seed = simulate::fresh_seed();
            eprintln!("orcal: no seed given; using generated seed {seed}");
            obj.insert("seed".into(), seed.into());
        }
        if let Some(seed) = seed_override {
            obj.insert("seed".into(), seed.into());
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Input(format!("{spec}: {e}")))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut spec = load_spec(&args.spec, args.seed)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    spec.validate().map_err(input)?;
    let result = spec.run().map_err(estimation)?;
    write_output(args.output.as_deref(), &to_json(&result))
}

pub fn population(args: &PopulationArgs) -> Result<(), CliError> {
    let spec = load_spec(&args.spec, None)?;
    let mut pop = spec.population();
    if let Some(seed) = args.seed {
        pop.seed = seed;
    }
    let frame = simulate::generate_population(&pop).map_err(input)?;
    let mut text = String::from("y,x,z\n");
    for i in 0..frame.len() {
        text.push_str(&format!("{},{},{}\n", frame.y[i], frame.x[i], frame.z[i]));
    }
    match &args.output {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CompareRow {
    knots: usize,
    degree: usize,
    num_basis: usize,
    collapsed_knots: usize,
    var_bspline: f64,
    gain_bspline: f64,
}

#[derive(Serialize)]
struct CompareReport {
    #[serde(rename = "N")]
    population_size: usize,
    #[serde(rename = "n")]
    sample_size: usize,
    beta0: f64,
    beta1: f64,
    or: f64,
    var_ht: f64,
    var_greg: f64,
    gain_greg: f64,
    settings: Vec<CompareRow>,
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let knots = parse_int_set(&args.knots).map_err(|e| CliError::Input(format!("--knots: {e}")))?;
    let degrees =
        parse_int_set(&args.degree).map_err(|e| CliError::Input(format!("--degree: {e}")))?;
    if degrees.contains(&0) {
        return Err(CliError::Input("--degree: degrees start at 1".into()));
    }
    let frame = match (&args.population, &args.builtin) {
        (Some(path), _) => {
            let mut t = Table::read(path, &["y", "x", "z"])?;
            t.require_binary("y")?;
            PopulationFrame::new(t.take("y")?, t.take("x")?, t.take("z")?).map_err(input)?
        }
        (None, Some(name)) => {
            let spec = SimulationSpec::builtin(name).ok_or_else(|| {
                CliError::Input(format!(
                    "unknown built-in population '{name}' ({})",
                    BUILTIN_SPECS.join(", ")
                ))
            })?;
            let mut pop = spec.population();
            if let Some(seed) = args.seed {
                pop.seed = seed;
            }
            simulate::generate_population(&pop).map_err(input)?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let big_n = frame.len();
    let n = args.sample_size.unwrap_or((big_n / 20).max(2));
    let design = Srswor::new(big_n, n).map_err(input)?;
    if n == big_n {
        return Err(CliError::Input("a census has no sampling variance to compare".into()));
    }
    let lin = population_linearization(&frame, &design, FitOptions::default()).map_err(estimation)?;
    let mut settings = Vec::new();
    for &m in &degrees {
        for &k in &knots {
            let c = bspline_asymptotic_variance(&frame, &design, &lin, k, m).map_err(|e| {
                CliError::Estimation(format!("K = {k}, m = {m}: {e}"))
            })?;
            settings.push(CompareRow {
                knots: k,
                degree: m,
                num_basis: c.num_basis,
                collapsed_knots: c.collapsed_knots,
                var_bspline: c.var_bspline,
                gain_bspline: c.gain_bspline,
            });
        }
    }
    let report = CompareReport {
        population_size: big_n,
        sample_size: n,
        beta0: lin.fit.beta.b0,
        beta1: lin.fit.beta.b1,
        or: lin.fit.beta.b1.exp(),
        var_ht: lin.var_ht,
        var_greg: lin.var_greg,
        gain_greg: 1.0 - lin.var_greg / lin.var_ht,
        settings,
    };
    write_output(args.output.as_deref(), &to_json(&report))
}
