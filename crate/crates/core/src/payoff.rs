//! Discounted harvest income of a path and its Monte Carlo expectation.
//!
//! Path `i` of a run is simulated from `path_seed(base_seed, i)` (pairs share
//! a seed under antithetic sampling), per-path results are collected in index
//! order and reduced with a fixed pairwise tree, so estimates do not depend
//! on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctmc::GeneratorMatrix;
use crate::model::{ModelSpec, YieldFunction};
use crate::rng::path_seed;
use crate::simulate::{
    EndState, Engine, HarvestEvent, HarvestKind, HarvestedPath, Observer, PathEnd, SimConfig, SimError,
};
use crate::strategies::StrategySpec;

fn default_antithetic() -> bool {
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_antithetic")]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, base_seed: u64) -> Self {
        Self { n_paths, base_seed, antithetic: false }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_paths == 0 {
            return Err(SimError::InvalidConfig("n_paths must be >= 1".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(SimError::InvalidConfig(format!(
                "antithetic sampling needs an even path count, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }

    /// Seed and noise sign of path `i`.
    #[inline]
    pub fn path(&self, i: usize) -> (u64, bool) {
        if self.antithetic {
            (path_seed(self.base_seed, (i / 2) as u64), i % 2 == 1)
        } else {
            (path_seed(self.base_seed, i as u64), false)
        }
    }
}

/// Bound on the discounted income a truncated path could still collect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailBound {
    Finite(f64),
    Unbounded,
}

impl TailBound {
    pub fn as_finite(&self) -> Option<f64> {
        match self {
            TailBound::Finite(v) => Some(*v),
            TailBound::Unbounded => None,
        }
    }
}

impl std::fmt::Display for TailBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TailBound::Finite(v) => write!(f, "{v}"),
            TailBound::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for TailBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TailBound::Finite(v) => s.serialize_f64(*v),
            TailBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub truncated_fraction: f64,
    pub tail_bound: TailBound,
    /// Mean and standard error of `∫ e^{-rt} dL` over the reflection part of the harvest.
    pub local_time_mean: f64,
    pub local_time_stderr: f64,
}

/// Per-path result of an estimation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub payoff: f64,
    /// Discounted reflection harvest, without the price.
    pub local_time: f64,
    pub end: EndState,
    pub t_end: f64,
    pub x_end: f64,
    pub regime_end: usize,
}

#[inline]
fn discounted(t: f64, r: f64, price: f64, amount: f64) -> f64 {
    (-r * t).exp() * price * amount
}

struct Accumulator<'a> {
    r: f64,
    /// `exp(-r·k·dt)` by grid index; same arithmetic as `discounted` at `t = k·dt`.
    discount: &'a [f64],
    payoff: f64,
    local_time: f64,
}

impl Observer for Accumulator<'_> {
    const RECORD: bool = false;

    #[inline]
    fn harvest(&mut self, ev: HarvestEvent, price: f64, grid: Option<u64>) {
        let d = match grid.and_then(|k| self.discount.get(k as usize)) {
            Some(&d) => d,
            None => (-self.r * ev.t).exp(),
        };
        self.payoff += d * price * ev.amount;
        if ev.kind == HarvestKind::Reflection {
            self.local_time += d * ev.amount;
        }
    }
}

/// `Σ e^{-rt} f(X̂(t−), α(t−)) ΔZ(t)` over atoms plus `Σ e^{-rt} f(X̂(t), α(t)) ΔL(t)`
/// over reflection increments, in time order.
pub fn path_payoff(path: &HarvestedPath, f: &YieldFunction, r: f64) -> f64 {
    path.harvests.iter().map(|ev| (ev.t, f.eval_unchecked(ev.x, ev.regime), ev.amount)).fold(
        0.0,
        |acc, (t, price, amount)| acc + discounted(t, r, price, amount),
    )
}

/// Sum with a fixed binary tree; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().fold(0.0, |a, b| a + b)
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Largest exponential growth rate of the uncontrolled mean, when the model has one.
pub fn growth_rate(model: &ModelSpec) -> Option<f64> {
    match model {
        ModelSpec::Gbm { mu, .. } => Some(mu.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        ModelSpec::Abm { drift, .. } => {
            (drift.iter().copied().fold(f64::NEG_INFINITY, f64::max) <= 0.0).then_some(0.0)
        }
        ModelSpec::Tabulated(_) => None,
    }
}

/// `e^{-rT} f_max X̄ r/(r - μ_max)` where `X̄` averages the surviving state over
/// all paths (non-survivors count as zero). Unbounded when `μ_max ≥ r`.
pub fn tail_bound(x_bar: f64, truncated_fraction: f64, model: &ModelSpec, f: &YieldFunction, r: f64, t_max: f64) -> TailBound {
    if truncated_fraction == 0.0 {
        return TailBound::Finite(0.0);
    }
    match growth_rate(model) {
        Some(g) if g < r => TailBound::Finite((-r * t_max).exp() * f.max_price() * x_bar * r / (r - g)),
        _ => TailBound::Unbounded,
    }
}

/// Runs `mc.n_paths` paths of `engine` on the current rayon pool.
pub(crate) fn run_paths(engine: &Engine<'_>, r: f64, x0: f64, a0: usize, mc: &McConfig) -> Vec<PathOutcome> {
    let dt = engine.dt();
    let discount: Vec<f64> = (0..engine.grid_len()).map(|k| (-r * (k as f64 * dt)).exp()).collect();
    (0..mc.n_paths)
        .into_par_iter()
        .map(|i| {
            let (seed, negate) = mc.path(i);
            let mut acc = Accumulator { r, discount: &discount, payoff: 0.0, local_time: 0.0 };
            let PathEnd { end, t, x, regime } = engine.run(x0, a0, seed, negate, &mut acc);
            PathOutcome { payoff: acc.payoff, local_time: acc.local_time, end, t_end: t, x_end: x, regime_end: regime }
        })
        .collect()
}

/// Averages antithetic pairs so that each sample is independent.
pub(crate) fn units(values: Vec<f64>, antithetic: bool) -> Vec<f64> {
    if antithetic {
        values.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    } else {
        values
    }
}

/// Per-path outcomes of an estimation run, in path-index order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_outcomes(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    strategy: &StrategySpec,
    f: &YieldFunction,
    r: f64,
    x0: f64,
    a0: usize,
    sim: &SimConfig,
    mc: &McConfig,
) -> Result<Vec<PathOutcome>, SimError> {
    sim.validate()?;
    mc.validate()?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(SimError::InvalidConfig(format!("discount rate {r} must be >= 0")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(SimError::NonPositiveInitial(x0));
    }
    if a0 >= q.m() {
        return Err(crate::ctmc::CtmcError::RegimeOutOfRange { regime: a0, m: q.m() }.into());
    }
    let mut engine = Engine::new(model, q, strategy, f, sim.dt, sim.horizon, sim.extinction_level)?;
    engine.stop_when_exhausted = true;
    Ok(run_paths(&engine, r, x0, a0, mc))
}

/// Reduces per-path outcomes to an estimate.
pub fn summarize(
    outcomes: &[PathOutcome],
    antithetic: bool,
    model: &ModelSpec,
    f: &YieldFunction,
    r: f64,
    t_max: f64,
) -> PayoffEstimate {
    let n = outcomes.len();
    let (mean, stderr) = mean_stderr(&units(outcomes.iter().map(|o| o.payoff).collect(), antithetic));
    let (lt_mean, lt_stderr) = mean_stderr(&units(outcomes.iter().map(|o| o.local_time).collect(), antithetic));
    let survivors: Vec<f64> =
        outcomes.iter().map(|o| if o.end == EndState::Truncated { o.x_end } else { 0.0 }).collect();
    let truncated = outcomes.iter().filter(|o| o.end == EndState::Truncated).count();
    let truncated_fraction = truncated as f64 / n as f64;
    let x_bar = pairwise_sum(&survivors) / n as f64;
    PayoffEstimate {
        mean,
        stderr,
        n_paths: n,
        truncated_fraction,
        tail_bound: tail_bound(x_bar, truncated_fraction, model, f, r, t_max),
        local_time_mean: lt_mean,
        local_time_stderr: lt_stderr,
    }
}

/// Monte Carlo estimate of `J(x0, α0, Z)` for the policy `strategy`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_j(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    strategy: &StrategySpec,
    f: &YieldFunction,
    r: f64,
    x0: f64,
    a0: usize,
    sim: &SimConfig,
    mc: &McConfig,
) -> Result<PayoffEstimate, SimError> {
    let outcomes = simulate_outcomes(model, q, strategy, f, r, x0, a0, sim, mc)?;
    Ok(summarize(&outcomes, mc.antithetic, model, f, r, sim.horizon))
}

/// One row of the estimates table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub scenario_id: String,
    pub x0: f64,
    pub alpha0: usize,
    pub strategy: String,
    pub n_paths: usize,
    pub mean: f64,
    pub stderr: f64,
    pub truncated_fraction: f64,
    pub tail_bound: String,
}

impl EstimateRow {
    pub fn new(scenario_id: &str, x0: f64, alpha0: usize, strategy: &StrategySpec, est: &PayoffEstimate) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            x0,
            alpha0,
            strategy: strategy.label(),
            n_paths: est.n_paths,
            mean: est.mean,
            stderr: est.stderr,
            truncated_fraction: est.truncated_fraction,
            tail_bound: est.tail_bound.to_string(),
        }
    }
}
