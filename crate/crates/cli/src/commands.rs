//! Subcommand implementations. Each one solves, writes its files and returns
//! the lines printed to stdout.

use std::time::Instant;

use netbridge::oracle::{
    exact_bridge, exact_multicommodity, prior_path_measure, sample_population, OracleOptions, RNG_ALGORITHM,
};
use netbridge::unbalanced::{assemble_transitions, solve_unbalanced_multicommodity, CreationRowIndex};
use netbridge::{
    augment, augment_marginals, solve_bridge, solve_multicommodity, solve_unbalanced, Error, Marginal, Matrix,
    PathMeasure, SolverOptions,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{resolve, Config, ConfigError, Problem};
use crate::output::{fmt17, Cell, Csv, OutDir};
use crate::{experiment, Command};

pub const MANIFEST_FORMAT: &str = "netbridge-manifest/1";
pub const PARKING_LABEL: &str = "parking";
pub const DEFAULT_POPULATION: usize = 3000;

/// Solver-vs-oracle deviation above the verification threshold (exit code 1).
#[derive(Debug)]
pub struct VerifyFailed(pub f64);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solver deviates from the oracle by {}", fmt17(self.0))
    }
}

impl std::error::Error for VerifyFailed {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Effective options of one run, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub log_domain: bool,
    pub strict_eq23: bool,
    pub cap: usize,
    pub seed: u64,
    pub population: usize,
    pub multi_commodity: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        let s = SolverOptions::<f64>::default();
        Self {
            tol: s.tol,
            max_iter: s.max_iter,
            log_domain: s.log_domain,
            strict_eq23: false,
            cap: netbridge::oracle::DEFAULT_CAP,
            seed: 0,
            population: DEFAULT_POPULATION,
            multi_commodity: false,
        }
    }
}

impl RunOptions {
    fn solver(&self) -> SolverOptions<f64> {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            log_domain: self.log_domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub subcommand: String,
    pub version: String,
    pub rng: String,
    pub options: RunOptions,
    pub config: Config,
    pub labels: Vec<String>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub outputs: Vec<String>,
}

/// A problem file or a manifest from an earlier run.
pub enum Input {
    Config(Config),
    Manifest(Box<Manifest>),
}

pub fn parse_input(text: &str) -> anyhow::Result<Input> {
    let value: Value = serde_json::from_str(text).map_err(|e| bad(format!("invalid JSON: {e}")))?;
    if value.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) {
        let m: Manifest = serde_json::from_value(value).map_err(|e| bad(format!("invalid manifest: {e}")))?;
        Ok(Input::Manifest(Box::new(m)))
    } else {
        Config::from_json(text).map(Input::Config)
    }
}

#[derive(Default)]
pub struct Report {
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub lines: Vec<String>,
}

pub fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Single => "single",
        Command::Multi => "multi",
        Command::Unbalanced { .. } => "unbalanced",
        Command::Verify => "verify",
        Command::Sample { .. } => "sample",
        Command::Experiment => "experiment",
    }
}

/// Runs one subcommand and writes its outputs plus `manifest.json`.
pub fn execute(cmd: &Command, config: Config, options: RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let started = Instant::now();
    let problem = resolve(&config)?;
    let report = match cmd {
        Command::Single => single(&problem, &options, out)?,
        Command::Multi => multi(&problem, &options, out)?,
        Command::Unbalanced { .. } if options.multi_commodity => unbalanced_multi(&problem, &options, out)?,
        Command::Unbalanced { .. } => unbalanced(&problem, &options, out)?,
        Command::Verify => verify(&problem, &options, out)?,
        Command::Sample { .. } => sample(&problem, &options, out)?,
        Command::Experiment => run_experiment(&config, &problem, &options, out)?,
    };
    let labels = match cmd {
        Command::Unbalanced { .. } | Command::Experiment => augmented_labels(&problem),
        _ => problem.labels.clone(),
    };
    let mut outputs = out.written.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        subcommand: command_name(cmd).into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: RNG_ALGORITHM.into(),
        options,
        config,
        labels,
        iterations: report.iterations,
        residual: report.residual,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        outputs,
    };
    out.json("manifest.json", &manifest)?;
    Ok(report)
}

fn augmented_labels(p: &Problem) -> Vec<String> {
    let mut l = p.labels.clone();
    l.push(PARKING_LABEL.into());
    l
}

fn matrix_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.to_rows()
}

/// `marginals[k][t][i]` as `flows.json` and `flows.csv`.
fn write_flows(
    out: &mut OutDir,
    labels: &[String],
    names: &[String],
    marginals: &[Vec<Vec<f64>>],
    extra: Value,
) -> anyhow::Result<()> {
    let masses: Vec<f64> = marginals.iter().map(|mk| mk[0].iter().sum()).collect();
    let mut doc = json!({
        "labels": labels,
        "commodities": names,
        "horizon": marginals[0].len() - 1,
        "masses": masses,
        "marginals": marginals,
    });
    if let (Some(d), Value::Object(e)) = (doc.as_object_mut(), extra) {
        d.extend(e);
    }
    out.json("flows.json", &doc)?;
    let mut csv = Csv::new(&["t", "k", "vertex", "label", "mass"]);
    for t in 0..marginals[0].len() {
        for (k, mk) in marginals.iter().enumerate() {
            for (i, &m) in mk[t].iter().enumerate() {
                csv.row(&[Cell::Int(t), Cell::Int(k), Cell::Int(i), Cell::Str(&labels[i]), Cell::Num(m)]);
            }
        }
    }
    out.csv("flows.csv", &csv)
}

fn write_kernels(out: &mut OutDir, labels: &[String], names: &[String], transitions: &[Vec<Matrix<f64>>]) -> anyhow::Result<()> {
    let tr: Vec<Vec<Vec<Vec<f64>>>> = transitions
        .iter()
        .map(|tk| tk.iter().map(matrix_rows).collect())
        .collect();
    out.json(
        "kernels.json",
        &json!({ "labels": labels, "commodities": names, "transitions": tr }),
    )
}

/// Parked mass and the fluxes out of / into the parking state (last index),
/// summed over commodities. Fluxes at the final time are zero.
pub fn parking_rows(marginals: &[Vec<Vec<f64>>], transitions: &[Vec<Matrix<f64>>]) -> Vec<[f64; 3]> {
    let horizon = marginals[0].len() - 1;
    let n = marginals[0][0].len() - 1;
    (0..=horizon)
        .map(|t| {
            let mut row = [0.0; 3];
            for (mk, pk) in marginals.iter().zip(transitions) {
                row[0] += mk[t][n];
                if t < horizon {
                    let p = &pk[t];
                    row[1] += mk[t][n] * (0..n).map(|j| p[(n, j)]).sum::<f64>();
                    row[2] += (0..n).map(|i| mk[t][i] * p[(i, n)]).sum::<f64>();
                }
            }
            row
        })
        .collect()
}

fn write_parking(out: &mut OutDir, rows: &[[f64; 3]]) -> anyhow::Result<()> {
    let mut csv = Csv::new(&["t", "parked_mass", "created_flux", "killed_flux"]);
    for (t, r) in rows.iter().enumerate() {
        csv.row(&[Cell::Int(t), Cell::Num(r[0]), Cell::Num(r[1]), Cell::Num(r[2])]);
    }
    out.csv("parking.csv", &csv)
}

fn max_row_defect(transitions: &[Matrix<f64>]) -> f64 {
    transitions
        .iter()
        .flat_map(|m| m.row_sums())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn summary(iterations: usize, residual: f64) -> Vec<String> {
    vec![format!("iterations: {iterations}"), format!("residual: {}", fmt17(residual))]
}

fn single(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    if p.commodities() != 1 {
        return Err(bad(format!("`single` needs one kernel, got {}", p.commodities())));
    }
    let (mu0, mu_n) = p.marginals()?;
    let kernel = &p.kernels[0];
    let sol = solve_bridge(kernel, &mu0, &mu_n, p.horizon, &o.solver())?;
    let objective = sol.objective(kernel, p.initials.as_ref().map(|r| r[0].as_slice()));
    write_flows(
        out,
        &p.labels,
        &p.names,
        &[sol.marginals.clone()],
        json!({ "objective": objective, "iterations": sol.iterations, "residual": sol.residual }),
    )?;
    write_kernels(out, &p.labels, &p.names, &[sol.transitions.clone()])?;
    let mut lines = summary(sol.iterations, sol.residual);
    lines.push(format!("objective: {}", fmt17(objective)));
    Ok(Report {
        iterations: Some(sol.iterations),
        residual: Some(sol.residual),
        lines,
    })
}

fn multi(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let model = p.model()?;
    let (mu0, mu_n) = p.marginals()?;
    let sol = solve_multicommodity(&model, &mu0, &mu_n, p.horizon, &o.solver())?;
    let objective = sol.objective(&model);
    write_flows(
        out,
        &p.labels,
        &p.names,
        &sol.marginals,
        json!({ "objective": objective, "iterations": sol.iterations, "residual": sol.residual }),
    )?;
    write_kernels(out, &p.labels, &p.names, &sol.transitions)?;
    let mut lines = summary(sol.iterations, sol.residual);
    lines.push(format!("objective: {}", fmt17(objective)));
    for (name, m) in p.names.iter().zip(&sol.masses) {
        lines.push(format!("mass {name}: {}", fmt17(*m)));
    }
    Ok(Report {
        iterations: Some(sol.iterations),
        residual: Some(sol.residual),
        lines,
    })
}

fn creation_of(p: &Problem) -> anyhow::Result<&[netbridge::Creation<f64>]> {
    p.creation
        .as_deref()
        .ok_or_else(|| bad("`creation` is required for problems with parking"))
}

fn unbalanced(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    if p.commodities() != 1 {
        return Err(bad("several commodities with parking need --multi-commodity"));
    }
    let aug = augment(&p.kernels[0], creation_of(p)?[0].clone())?;
    let (mu0, mu_n) = p.marginals()?;
    let (m0, mn) = augment_marginals(&mu0, &mu_n)?;
    let sol = solve_unbalanced(&aug, &m0, &mn, p.horizon, &o.solver())?;
    let mut lines = summary(sol.iterations, sol.residual);
    let transitions = if o.strict_eq23 {
        let printed = assemble_transitions(&aug, &sol.potentials, CreationRowIndex::Current);
        lines.push(format!(
            "printed creation-row formula: max row-sum defect {}",
            fmt17(max_row_defect(&printed))
        ));
        printed
    } else {
        sol.transitions.clone()
    };
    let defect = max_row_defect(&transitions);
    lines.push(format!("max row-sum defect: {}", fmt17(defect)));
    let labels = augmented_labels(p);
    let marginals = vec![sol.marginals.clone()];
    let transitions = vec![transitions];
    let parking = parking_rows(&marginals, &transitions);
    write_flows(
        out,
        &labels,
        &p.names,
        &marginals,
        json!({
            "iterations": sol.iterations,
            "residual": sol.residual,
            "moving_mass": sol.moving_mass(),
            "row_sum_defect": defect,
            "strict_eq23": o.strict_eq23,
        }),
    )?;
    write_kernels(out, &labels, &p.names, &transitions)?;
    write_parking(out, &parking)?;
    Ok(Report {
        iterations: Some(sol.iterations),
        residual: Some(sol.residual),
        lines,
    })
}

struct MultiParking {
    sol: netbridge::MultiCommoditySolution<f64>,
    labels: Vec<String>,
    parking: Vec<[f64; 3]>,
}

fn solve_multi_parking(p: &Problem, o: &RunOptions) -> anyhow::Result<MultiParking> {
    let model = p.model()?;
    let (mu0, mu_n) = p.marginals()?;
    let sol = solve_unbalanced_multicommodity(
        &model,
        creation_of(p)?,
        &p.parked_prior,
        &mu0,
        &mu_n,
        p.horizon,
        &o.solver(),
    )?;
    let parking = parking_rows(&sol.marginals, &sol.transitions);
    Ok(MultiParking {
        labels: augmented_labels(p),
        parking,
        sol,
    })
}

fn write_multi_parking(p: &Problem, r: &MultiParking, out: &mut OutDir) -> anyhow::Result<Vec<String>> {
    let sol = &r.sol;
    write_flows(
        out,
        &r.labels,
        &p.names,
        &sol.marginals,
        json!({ "iterations": sol.iterations, "residual": sol.residual }),
    )?;
    write_kernels(out, &r.labels, &p.names, &sol.transitions)?;
    write_parking(out, &r.parking)?;
    let mut lines = summary(sol.iterations, sol.residual);
    for (name, m) in p.names.iter().zip(&sol.masses) {
        lines.push(format!("mass {name}: {}", fmt17(*m)));
    }
    Ok(lines)
}

fn unbalanced_multi(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let r = solve_multi_parking(p, o)?;
    let lines = write_multi_parking(p, &r, out)?;
    Ok(Report {
        iterations: Some(r.sol.iterations),
        residual: Some(r.sol.residual),
        lines,
    })
}

fn run_experiment(config: &Config, p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let r = solve_multi_parking(p, o)?;
    let mut lines = write_multi_parking(p, &r, out)?;
    out.json("config.json", config)?;
    let sol = &r.sol;
    let n = p.n();
    let horizon = p.horizon;

    let mut edge_mass = Csv::new(&["t", "commodity", "vertex", "label", "mass"]);
    for t in 0..=horizon {
        let total = sol.aggregate_marginal(t);
        for i in 0..n {
            for (k, name) in p.names.iter().enumerate() {
                let m = sol.marginals[k][t][i];
                edge_mass.row(&[Cell::Int(t), Cell::Str(name), Cell::Int(i), Cell::Str(&p.labels[i]), Cell::Num(m)]);
            }
            edge_mass.row(&[Cell::Int(t), Cell::Str("total"), Cell::Int(i), Cell::Str(&p.labels[i]), Cell::Num(total[i])]);
        }
    }
    out.csv("plot_edge_mass.csv", &edge_mass)?;

    // Share of each commodity that is on the road rather than parked
    let mut moving = Csv::new(&["t", "commodity", "moving_proportion"]);
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..=horizon {
        let mut rows: Vec<(&str, f64)> = p
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mk = &sol.marginals[k][t];
                let on_road: f64 = mk[..n].iter().sum();
                (name.as_str(), on_road / sol.masses[k])
            })
            .collect();
        let total = sol.aggregate_marginal(t);
        rows.push(("total", total[..n].iter().sum::<f64>()));
        for (name, v) in rows {
            bounds = (bounds.0.min(v), bounds.1.max(v));
            moving.row(&[Cell::Int(t), Cell::Str(name), Cell::Num(v)]);
        }
    }
    out.csv("plot_moving_proportion.csv", &moving)?;

    let gap = |t: usize, target: &[f64]| {
        let agg = sol.aggregate_marginal(t);
        agg[..n].iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut forbidden = serde_json::Map::new();
    for (k, list) in p.forbidden.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mut worst: f64 = 0.0;
        for t in 0..horizon {
            let m = &sol.transitions[k][t];
            for i in 0..=n {
                for &v in list {
                    worst = worst.max(m[(i, v)]);
                }
            }
        }
        for t in 0..=horizon {
            for &v in list {
                worst = worst.max(sol.marginals[k][t][v]);
            }
        }
        lines.push(format!("forbidden {}: max posterior probability {}", p.names[k], fmt17(worst)));
        forbidden.insert(p.names[k].clone(), json!(worst));
    }
    let (gap0, gap_n) = (gap(0, &p.mu0), gap(horizon, &p.mu_n));
    lines.push(format!("aggregate gap t=0: {}", fmt17(gap0)));
    lines.push(format!("aggregate gap t={horizon}: {}", fmt17(gap_n)));
    lines.push(format!("moving proportion range: [{}, {}]", fmt17(bounds.0), fmt17(bounds.1)));
    out.json(
        "properties.json",
        &json!({
            "forbidden_max_probability": forbidden,
            "aggregate_gap_initial": gap0,
            "aggregate_gap_final": gap_n,
            "moving_proportion_min": bounds.0,
            "moving_proportion_max": bounds.1,
            "weights": p.weights,
            "horizon": horizon,
        }),
    )?;
    Ok(Report {
        iterations: Some(sol.iterations),
        residual: Some(sol.residual),
        lines,
    })
}

/// The instance `verify` checks when no config is given.
pub fn bundled_verify_config() -> Config {
    Config::from_json(
        r#"{
            "kernels": {"default": [[0.7, 0.3], [0.4, 0.6]]},
            "initials": {"default": [0.5, 0.5]},
            "marginals": {"mu0": [0.9, 0.1], "muN": [0.2, 0.8]},
            "horizon": 3
        }"#,
    )
    .expect("bundled instance parses")
}

pub const VERIFY_THRESHOLD: f64 = 1e-6;

fn verify(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let oracle = OracleOptions {
        cap: o.cap,
        ..OracleOptions::default()
    };
    let (mu0, mu_n) = p.marginals()?;
    let (kind, deviation, iterations, residual) = match (&p.creation, p.commodities()) {
        (Some(c), 1) => {
            let aug = augment(&p.kernels[0], c[0].clone())?;
            let (m0, mn) = augment_marginals(&mu0, &mu_n)?;
            let sol = solve_unbalanced(&aug, &m0, &mn, p.horizon, &o.solver())?;
            let uniform = Marginal::<f64>::uniform(p.n() + 1);
            let prior = prior_path_measure(uniform.as_slice(), aug.kernel(), p.horizon, o.cap)?;
            let exact = exact_bridge(&prior, m0.as_slice(), mn.as_slice(), &oracle)?;
            let ours = PathMeasure::from_markov(&sol.marginals[0], &sol.transitions, o.cap)?;
            ("unbalanced", ours.max_abs_diff(&exact), sol.iterations, sol.residual)
        }
        (Some(_), _) => return Err(bad("`verify` does not cover several commodities with parking")),
        (None, 1) => {
            let sol = solve_bridge(&p.kernels[0], &mu0, &mu_n, p.horizon, &o.solver())?;
            let uniform = Marginal::<f64>::uniform(p.n());
            let prior = prior_path_measure(uniform.as_slice(), &p.kernels[0], p.horizon, o.cap)?;
            let exact = exact_bridge(&prior, mu0.as_slice(), mu_n.as_slice(), &oracle)?;
            let ours = sol.path_measure(o.cap)?;
            ("single", ours.max_abs_diff(&exact), sol.iterations, sol.residual)
        }
        (None, _) => {
            let model = p.model()?;
            let sol = solve_multicommodity(&model, &mu0, &mu_n, p.horizon, &o.solver())?;
            let exact = exact_multicommodity(&model, mu0.as_slice(), mu_n.as_slice(), p.horizon, &oracle)?;
            let ours = sol.path_measures(o.cap)?;
            let dev = ours
                .iter()
                .zip(&exact)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            ("multi", dev, sol.iterations, sol.residual)
        }
    };
    out.json(
        "verify.json",
        &json!({
            "problem": kind,
            "max_deviation": deviation,
            "threshold": VERIFY_THRESHOLD,
            "iterations": iterations,
            "residual": residual,
        }),
    )?;
    if !(deviation < VERIFY_THRESHOLD) {
        return Err(VerifyFailed(deviation).into());
    }
    let mut lines = summary(iterations, residual);
    lines.push(format!("max deviation: {}", fmt17(deviation)));
    Ok(Report {
        iterations: Some(iterations),
        residual: Some(residual),
        lines,
    })
}

fn sample(p: &Problem, o: &RunOptions, out: &mut OutDir) -> anyhow::Result<Report> {
    let model = p.model()?;
    let s = sample_population(&model, p.horizon, o.population, o.seed)?;
    let labels = if s.parking.is_some() { augmented_labels(p) } else { p.labels.clone() };
    let mut paths = Csv::new(&["individual", "k", "t", "vertex", "label"]);
    let mut counts = vec![vec![vec![0usize; s.states]; p.horizon + 1]; p.commodities()];
    for (idx, (k, path)) in s.paths.iter().enumerate() {
        for (t, &v) in path.iter().enumerate() {
            paths.row(&[Cell::Int(idx), Cell::Int(*k), Cell::Int(t), Cell::Int(v), Cell::Str(&labels[v])]);
            counts[*k][t][v] += 1;
        }
    }
    out.csv("samples.csv", &paths)?;
    let scale = 1.0 / o.population as f64;
    let marginals: Vec<Vec<Vec<f64>>> = counts
        .iter()
        .map(|ck| ck.iter().map(|row| row.iter().map(|&c| c as f64 * scale).collect()).collect())
        .collect();
    // The rate needs the full path tensors; skip it past the size cap or with parking
    let rate = match (s.parking, s.empirical::<f64>(o.cap)) {
        (None, Ok(m)) => Some(netbridge::rate_function(&m, &model)?),
        (_, Err(Error::SizeCap { .. })) | (Some(_), Ok(_)) => None,
        (_, Err(e)) => return Err(e.into()),
    };
    write_flows(
        out,
        &labels,
        &p.names,
        &marginals,
        json!({ "population": o.population, "seed": o.seed, "counts": s.commodity_counts(), "rate": rate }),
    )?;
    let mut lines = vec![format!("population: {}", o.population), format!("seed: {}", o.seed)];
    for (name, c) in p.names.iter().zip(s.commodity_counts()) {
        lines.push(format!("count {name}: {c}"));
    }
    lines.push(match rate {
        Some(r) => format!("rate: {}", fmt17(r)),
        None => "rate: skipped".into(),
    });
    Ok(Report {
        lines,
        ..Report::default()
    })
}

/// The experiment config when none is given on the command line.
pub fn default_experiment() -> Config {
    experiment::scenario()
}
