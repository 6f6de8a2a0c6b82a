//! Scenario runner: parses scenario files, runs simulations, estimates and
//! checks, and writes CSV tables, SVG plots and JSON run records.

pub mod config;
pub mod plot;
pub mod record;
pub mod reference;
pub mod suite;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use harvest_core::model::GridFunction;
use harvest_core::payoff::{estimate_j, EstimateRow};
use harvest_core::qvi::{dpp_gap, g_condition_check, lyapunov_check, qvi_check};
use harvest_core::simulate::{simulate_harvested, SimConfig};
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use config::{load_scenario, Check, ConfigError, Scenario};
use plot::{emit_plot, PlotKind};
use reference::ClosedForm;
use suite::to_csv;

/// Paths written per start by `--dump-paths`.
pub const DUMPED_PATHS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "harvest", version, about = "Harvesting strategies under regime switching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: RunOptions,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunOptions {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides both the simulation seed and the Monte Carlo base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the Monte Carlo path count.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads; changes speed only.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write the first paths of each estimate as CSV.
    #[arg(long, global = true)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate one path per start and write it as CSV.
    Simulate(ConfigArg),
    /// Monte Carlo estimates of the payoff.
    Estimate(ConfigArg),
    /// Closed-form values.
    Value(ConfigArg),
    /// Characteristic roots as JSON.
    Roots(ConfigArg),
    /// QVI residuals and the configured checks.
    Qvi(ConfigArg),
    /// Estimates against closed forms, plus the configured checks.
    Scenario(ConfigArg),
    /// Built-in acceptance scenarios.
    PaperSuite,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Result of a subcommand: whether every self-check passed, and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
    pub results: Json,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text)?;
        self.files.push(path.clone());
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.text(name, &(serde_json::to_string_pretty(value).map_err(runtime)? + "\n"))
    }

    fn plot(&mut self, kind: PlotKind, csv_text: &str, title: &str) -> Result<(), CliError> {
        let path = self.dir.join(format!("{}.svg", kind.file_stem()));
        emit_plot(kind, csv_text, title, &path).map_err(runtime)?;
        self.files.push(path);
        Ok(())
    }
}

/// Applies command-line overrides to a scenario.
pub fn resolve(mut s: Scenario, opts: &RunOptions) -> Result<Scenario, ConfigError> {
    if let Some(seed) = opts.seed {
        s.sim.seed = seed;
        s.mc.base_seed = seed;
    }
    if let Some(n) = opts.paths {
        s.mc.n_paths = n;
    }
    s.validate()?;
    Ok(s)
}

/// Runs `cli` and writes its outputs.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let threads = cli.opts.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(ConfigError::Invalid("--threads must be >= 1".into()).into());
    }
    suite::with_threads(threads, || run_inner(cli, threads))
}

fn run_inner(cli: &Cli, threads: usize) -> Result<Outcome, CliError> {
    let opts = &cli.opts;
    let (name, scenario, outcome) = match &cli.command {
        Command::PaperSuite => ("paper-suite", None, paper_suite(opts, threads)?),
        cmd => {
            let arg = match cmd {
                Command::Simulate(a)
                | Command::Estimate(a)
                | Command::Value(a)
                | Command::Roots(a)
                | Command::Qvi(a)
                | Command::Scenario(a) => a,
                Command::PaperSuite => unreachable!(),
            };
            let s = resolve(load_scenario(&arg.config)?, opts)?;
            let mut w = Writer::new(opts.out.join(&s.id))?;
            let (name, outcome) = match cmd {
                Command::Simulate(_) => ("simulate", simulate(&s, &mut w)?),
                Command::Estimate(_) => ("estimate", estimate(&s, opts, &mut w)?),
                Command::Value(_) => ("value", value(&s, &mut w)?),
                Command::Roots(_) => ("roots", roots(&s, &mut w)?),
                Command::Qvi(_) => ("qvi", qvi(&s, &mut w)?),
                Command::Scenario(_) => ("scenario", scenario(&s, opts, &mut w)?),
                Command::PaperSuite => unreachable!(),
            };
            (name, Some(s), outcome)
        }
    };
    let record = record::RunRecord::new(name, scenario, threads, outcome.results.clone());
    let path = record.persist(&opts.out.join("runs"))?;
    let mut outcome = outcome;
    outcome.files.push(path);
    Ok(outcome)
}

fn closed_form(s: &Scenario) -> Result<Option<ClosedForm>, CliError> {
    ClosedForm::from_scenario(s).map_err(|e| ConfigError::Invalid(format!("reference: {e}")).into())
}

fn require_closed_form(s: &Scenario) -> Result<ClosedForm, CliError> {
    closed_form(s)?.ok_or_else(|| ConfigError::Invalid("this command needs reference = example1 | example2".into()).into())
}

fn simulate(s: &Scenario, w: &mut Writer) -> Result<Outcome, CliError> {
    let mut summaries = Vec::new();
    for (k, (x0, a0)) in s.starts().into_iter().enumerate() {
        let path = simulate_harvested(&s.model, &s.q, &s.strategy, &s.yield_fn, x0, a0, &s.sim).map_err(runtime)?;
        let rows: Vec<_> = path.rows().collect();
        w.text(&format!("paths/path_{k}.csv"), &to_csv(&rows))?;
        summaries.push(json!({
            "x0": x0, "alpha0": a0, "end": path.end, "final_x": path.final_x(),
            "total_harvest": path.total_harvest(), "tau": path.tau, "points": rows.len(),
        }));
    }
    Ok(Outcome { pass: true, files: std::mem::take(&mut w.files), results: json!({ "paths": summaries }) })
}

fn dump_paths(s: &Scenario, w: &mut Writer) -> Result<(), CliError> {
    for (k, (x0, a0)) in s.starts().into_iter().enumerate() {
        for i in 0..DUMPED_PATHS.min(s.mc.n_paths) {
            let (seed, negate) = s.mc.path(i);
            if negate {
                continue;
            }
            let cfg = SimConfig { seed, ..s.sim };
            let path = simulate_harvested(&s.model, &s.q, &s.strategy, &s.yield_fn, x0, a0, &cfg).map_err(runtime)?;
            let rows: Vec<_> = path.rows().collect();
            w.text(&format!("paths/start{k}_path{i}.csv"), &to_csv(&rows))?;
        }
    }
    Ok(())
}

fn estimate_rows(s: &Scenario) -> Result<Vec<EstimateRow>, CliError> {
    s.starts()
        .into_iter()
        .map(|(x0, a0)| {
            let est =
                estimate_j(&s.model, &s.q, &s.strategy, &s.yield_fn, s.r, x0, a0, &s.sim, &s.mc).map_err(runtime)?;
            Ok(EstimateRow::new(&s.id, x0, a0, &s.strategy, &est))
        })
        .collect()
}

fn estimate(s: &Scenario, opts: &RunOptions, w: &mut Writer) -> Result<Outcome, CliError> {
    let rows = estimate_rows(s)?;
    w.text("estimates.csv", &to_csv(&rows))?;
    if opts.dump_paths {
        dump_paths(s, w)?;
    }
    Ok(Outcome { pass: true, files: std::mem::take(&mut w.files), results: json!({ "estimates": rows }) })
}

#[derive(Debug, Serialize)]
struct ValueRow {
    x: f64,
    regime: usize,
    value: f64,
}

/// Grid of the residual checks and value tables.
pub fn check_grid(s: &Scenario, cf: Option<&ClosedForm>) -> Vec<f64> {
    let scale = s.x_scale();
    let x_min = s.qvi.x_min.unwrap_or(1e-2 * scale);
    let x_max = s.qvi.x_max.unwrap_or(10.0 * scale);
    let n = s.qvi.n;
    let h = (x_max - x_min) / (n - 1) as f64;
    match s.qvi.anchor.or_else(|| cf.and_then(|c| c.barrier())) {
        Some(b) if b > x_min && b < x_max => {
            let below = ((b - x_min) / h).round() as usize;
            suite::anchored_grid(b, h, n, below)
        }
        _ => (0..n).map(|i| if i == n - 1 { x_max } else { x_min + h * i as f64 }).collect(),
    }
}

fn value(s: &Scenario, w: &mut Writer) -> Result<Outcome, CliError> {
    let cf = require_closed_form(s)?;
    let mut starts = Vec::new();
    for (x0, a0) in s.starts() {
        let v = cf.value(x0, a0).map_err(runtime)?;
        starts.push(json!({ "x0": x0, "alpha0": a0, "value": v.map_or(json!("infinite"), |v| json!(v)) }));
    }
    let grid = check_grid(s, Some(&cf));
    let mut rows = Vec::new();
    for a in 0..s.q.m() {
        for &x in &grid {
            if let Some(v) = cf.value(x, a).map_err(runtime)? {
                rows.push(ValueRow { x, regime: a, value: v });
            }
        }
    }
    w.json("values.json", &starts)?;
    if !rows.is_empty() {
        let text = to_csv(&rows);
        w.text("value_vs_x.csv", &text)?;
        w.plot(PlotKind::ValueVsX, &text, &format!("{}: value function", s.id))?;
    }
    Ok(Outcome { pass: true, files: std::mem::take(&mut w.files), results: json!({ "values": starts }) })
}

fn roots(s: &Scenario, w: &mut Writer) -> Result<Outcome, CliError> {
    let cf = require_closed_form(s)?;
    let j = cf.roots_json().map_err(runtime)?;
    w.json("roots.json", &j)?;
    Ok(Outcome { pass: true, files: std::mem::take(&mut w.files), results: j })
}

/// Runs the residual checks listed in the scenario (the QVI check always).
fn checks(s: &Scenario, w: &mut Writer, always_qvi: bool) -> Result<(bool, Json), CliError> {
    let cf = closed_form(s)?;
    let grid = check_grid(s, cf.as_ref());
    let mut results = serde_json::Map::new();
    let mut pass = true;
    if always_qvi || s.checks.contains(&Check::Qvi) {
        let cf = cf.ok_or_else(|| ConfigError::Invalid("the qvi check needs a closed-form reference".into()))?;
        let mut values = Vec::new();
        for a in 0..s.q.m() {
            let row: Option<Vec<f64>> =
                grid.iter().map(|&x| cf.value(x, a)).collect::<Result<_, _>>().map_err(runtime)?;
            values.push(row.ok_or_else(|| CliError::Runtime("the qvi check needs a finite value function".into()))?);
        }
        let phi = GridFunction::new(grid.clone(), values).map_err(runtime)?;
        let rep = qvi_check(&phi, &s.model, &s.q, &s.yield_fn, s.r, s.qvi.tolerance).map_err(runtime)?;
        let text = to_csv(&rep.points);
        w.text("qvi.csv", &text)?;
        w.json("qvi_summary.json", &rep.summary())?;
        w.plot(PlotKind::ResidualHeatline, &text, &format!("{}: QVI residuals", s.id))?;
        results.insert("qvi".into(), serde_json::to_value(rep.summary()).map_err(runtime)?);
    }
    if s.checks.contains(&Check::GCondition) {
        let rep = g_condition_check(&s.model, &s.q, &s.yield_fn, s.r, &grid, s.qvi.sign_tol).map_err(runtime)?;
        results.insert(
            "g_condition".into(),
            json!({ "holds": rep.holds, "worst_x": rep.worst_x, "worst_regime": rep.worst_regime,
                    "worst_value": rep.worst_value, "violations": rep.violations }),
        );
    }
    if s.checks.contains(&Check::Lyapunov) {
        let k = s.qvi.lyapunov_power;
        let wf = GridFunction::from_fn(grid.clone(), s.q.m(), |x, _| x.powf(k)).map_err(runtime)?;
        let rep = lyapunov_check(&wf, &s.model, &s.q, s.qvi.sign_tol).map_err(runtime)?;
        results.insert(
            "lyapunov".into(),
            json!({ "power": k, "holds": rep.holds, "violations": rep.violations.len(), "reasons": rep.reasons }),
        );
    }
    if s.checks.contains(&Check::Dpp) {
        let dpp = s.dpp.as_ref().expect("validated");
        let cf = cf.ok_or_else(|| ConfigError::Invalid("the dpp check needs a closed-form reference".into()))?;
        let f = |x: f64, a: usize| cf.value(x, a).ok().flatten().unwrap_or(f64::NAN);
        let mut rows = Vec::new();
        for (x0, a0) in s.starts() {
            let rep = dpp_gap(&s.model, &s.q, &dpp.family, &s.yield_fn, s.r, x0, a0, dpp.eta, s.sim.dt, &f, &s.mc)
                .map_err(runtime)?;
            let ok = rep.gap <= 3.0 * rep.stderr;
            pass &= ok;
            rows.push(json!({ "x0": x0, "alpha0": a0, "report": rep, "consistent": ok }));
        }
        results.insert("dpp".into(), Json::Array(rows));
    }
    Ok((pass, Json::Object(results)))
}

fn qvi(s: &Scenario, w: &mut Writer) -> Result<Outcome, CliError> {
    let (pass, results) = checks(s, w, true)?;
    w.json("checks.json", &results)?;
    Ok(Outcome { pass, files: std::mem::take(&mut w.files), results })
}

#[derive(Debug, Serialize)]
struct ScenarioRow {
    x0: f64,
    alpha0: usize,
    #[serde(rename = "J_mc")]
    j_mc: f64,
    stderr: f64,
    phi_closed: String,
    z_score: String,
    rel_error: String,
}

fn scenario(s: &Scenario, opts: &RunOptions, w: &mut Writer) -> Result<Outcome, CliError> {
    let cf = closed_form(s)?;
    let estimates = estimate_rows(s)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for e in &estimates {
        let phi = match &cf {
            Some(c) => c.value(e.x0, e.alpha0).map_err(runtime)?,
            None => None,
        };
        let (z, rel) = match phi {
            Some(v) => {
                let diff = e.mean - v;
                let z = if e.stderr > 0.0 { diff / e.stderr } else if diff == 0.0 { 0.0 } else { f64::INFINITY * diff.signum() };
                pass &= z.abs() < 3.0;
                (z.to_string(), (diff / v).to_string())
            }
            None => (String::new(), String::new()),
        };
        rows.push(ScenarioRow {
            x0: e.x0,
            alpha0: e.alpha0,
            j_mc: e.mean,
            stderr: e.stderr,
            phi_closed: phi.map_or_else(|| if cf.is_some() { "infinite".into() } else { String::new() }, |v| v.to_string()),
            z_score: z,
            rel_error: rel,
        });
    }
    w.text("estimates.csv", &to_csv(&estimates))?;
    w.text("scenario.csv", &to_csv(&rows))?;
    if opts.dump_paths {
        dump_paths(s, w)?;
    }
    let (check_pass, check_results) = if s.checks.is_empty() { (true, json!({})) } else { checks(s, w, false)? };
    let results = json!({ "estimates": estimates, "checks": check_results });
    Ok(Outcome { pass: pass && check_pass, files: std::mem::take(&mut w.files), results })
}

#[derive(Debug, Serialize)]
struct SuiteRow<'a> {
    criterion: u8,
    name: &'a str,
    pass: bool,
    detail: &'a str,
}

#[derive(Debug, Serialize)]
struct TimingRow {
    criterion: u8,
    runtime_s: f64,
    budget_s: Option<f64>,
    within_budget: bool,
}

fn paper_suite(opts: &RunOptions, threads: usize) -> Result<Outcome, CliError> {
    let mut w = Writer::new(opts.out.join("paper-suite"))?;
    let results = suite::run_all(threads, |c| println!("{}", c.line()));
    for c in &results {
        for (name, text) in &c.tables {
            w.text(name, text)?;
        }
    }
    if let Some(t) = results.iter().find(|c| c.id == 4).and_then(|c| c.table("criterion4.csv")) {
        w.plot(PlotKind::JVsN, t, "chattering estimates")?;
    }
    if let Some(t) = results.iter().find(|c| c.id == 5).and_then(|c| c.table("criterion5_example2_residuals.csv")) {
        w.plot(PlotKind::ResidualHeatline, t, "power-decay model: QVI residuals")?;
    }
    let rows: Vec<SuiteRow> =
        results.iter().map(|c| SuiteRow { criterion: c.id, name: c.name, pass: c.pass, detail: &c.detail }).collect();
    w.text("suite.csv", &to_csv(&rows))?;
    let timing: Vec<TimingRow> = results
        .iter()
        .map(|c| TimingRow { criterion: c.id, runtime_s: c.runtime_s, budget_s: c.budget_s, within_budget: c.within_budget() })
        .collect();
    w.json("timing.json", &timing)?;
    let pass = results.iter().all(|c| c.pass);
    let summary = json!({ "criteria": results.iter().map(|c| json!({
        "criterion": c.id, "name": c.name, "pass": c.pass, "detail": c.detail,
        "runtime_s": c.runtime_s, "budget_s": c.budget_s,
    })).collect::<Vec<_>>() });
    Ok(Outcome { pass, files: std::mem::take(&mut w.files), results: summary })
}
