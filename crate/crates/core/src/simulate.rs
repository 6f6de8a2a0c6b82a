//! Path simulation of the harvested regime-switching diffusion.
//!
//! The time grid is `k·dt` for integer `k`, refined by the exact chain jump
//! times and the strategy's event times. Geometric models are stepped exactly
//! in `ln x`, arithmetic ones exactly in `x`, tabulated ones by Euler in `x`.
//! Within one instant the chain jump is applied before the strategy is
//! queried; atoms are priced at the pre-jump regime.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctmc::{ChainSampler, CtmcError, GeneratorMatrix};
use crate::model::{ModelError, ModelSpec, YieldFunction};
use crate::rng::{stream_rng, SimRng, STREAM_CHAIN, STREAM_NOISE};
use crate::strategies::{strategy_step, StrategyError, StrategySpec, StrategyState};

/// Bound on chained phase changes within one instant.
const MAX_QUERIES_PER_INSTANT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("initial population must be positive, got {0}")]
    NonPositiveInitial(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("strategy event schedule overflows floating-point resolution: {0}")]
    StrategyScheduleOverflow(StrategyError),
    #[error(transparent)]
    Strategy(StrategyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chain(#[from] CtmcError),
}

impl From<StrategyError> for SimError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::ScheduleUnderflow { .. } => SimError::StrategyScheduleOverflow(e),
            other => SimError::Strategy(other),
        }
    }
}

fn default_extinction_level() -> f64 {
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Truncation time `T_max`.
    pub horizon: f64,
    #[serde(default = "default_extinction_level")]
    pub extinction_level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        Self { dt, horizon, extinction_level: 0.0, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!("horizon = {} must be finite and >= dt", self.horizon)));
        }
        if !(self.extinction_level >= 0.0 && self.extinction_level.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "extinction level {} must be >= 0",
                self.extinction_level
            )));
        }
        Ok(())
    }
}

/// How a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndState {
    /// The harvested state reached the extinction level.
    Extinct,
    /// The horizon was reached first.
    Truncated,
    /// The strategy can no longer harvest; the rest of the path carries no income.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarvestKind {
    Atom,
    Reflection,
}

/// One harvest increment. For atoms `x` and `regime` are the left limits
/// `X̂(t−), α(t−)`; for reflections they are the post-projection state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarvestEvent {
    pub t: f64,
    pub amount: f64,
    pub x: f64,
    pub regime: usize,
    pub kind: HarvestKind,
}

/// One simulated trajectory; `x` is post-harvest at every recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestedPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub regime: Vec<usize>,
    pub z_cum: Vec<f64>,
    /// Total atom size removed at each recorded time.
    pub dz_atom: Vec<f64>,
    /// `(t, ΔZ)` of every atom.
    pub z_jumps: Vec<(f64, f64)>,
    /// Atoms and reflection increments in time order.
    pub harvests: Vec<HarvestEvent>,
    pub tau: Option<f64>,
    pub truncated: bool,
    pub end: EndState,
}

/// One CSV row of a dumped path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRow {
    pub t: f64,
    pub x: f64,
    pub regime: usize,
    pub z_cum: f64,
    pub dz_atom: f64,
}

impl HarvestedPath {
    pub fn rows(&self) -> impl Iterator<Item = PathRow> + '_ {
        (0..self.times.len()).map(move |i| PathRow {
            t: self.times[i],
            x: self.x[i],
            regime: self.regime[i],
            z_cum: self.z_cum[i],
            dz_atom: self.dz_atom[i],
        })
    }

    pub fn final_x(&self) -> f64 {
        *self.x.last().expect("a path records at least t = 0")
    }

    pub fn total_harvest(&self) -> f64 {
        *self.z_cum.last().expect("a path records at least t = 0")
    }
}

/// Receives the output of the engine. Implementors that do not need the full
/// path set `RECORD = false` so the per-step hook compiles away.
pub(crate) trait Observer {
    const RECORD: bool;
    fn point(&mut self, _t: f64, _x: f64, _regime: usize, _z_cum: f64, _atom: f64) {}
    /// `grid` is `Some(k)` when `ev.t` was computed as `k·dt`.
    fn harvest(&mut self, ev: HarvestEvent, price: f64, grid: Option<u64>);
}

#[derive(Default)]
struct Recorder {
    path: Option<HarvestedPath>,
}

impl Recorder {
    fn new() -> Self {
        Self {
            path: Some(HarvestedPath {
                times: Vec::new(),
                x: Vec::new(),
                regime: Vec::new(),
                z_cum: Vec::new(),
                dz_atom: Vec::new(),
                z_jumps: Vec::new(),
                harvests: Vec::new(),
                tau: None,
                truncated: false,
                end: EndState::Truncated,
            }),
        }
    }
}

impl Observer for Recorder {
    const RECORD: bool = true;

    fn point(&mut self, t: f64, x: f64, regime: usize, z_cum: f64, atom: f64) {
        let p = self.path.as_mut().expect("recorder is live");
        p.times.push(t);
        p.x.push(x.max(0.0));
        p.regime.push(regime);
        p.z_cum.push(z_cum);
        p.dz_atom.push(atom);
    }

    fn harvest(&mut self, ev: HarvestEvent, _price: f64, _grid: Option<u64>) {
        let p = self.path.as_mut().expect("recorder is live");
        if ev.kind == HarvestKind::Atom {
            p.z_jumps.push((ev.t, ev.amount));
        }
        p.harvests.push(ev);
    }
}

/// Summary of a finished path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PathEnd {
    pub end: EndState,
    pub t: f64,
    pub x: f64,
    pub regime: usize,
}

#[derive(Debug, Clone, Copy)]
enum Scheme {
    /// Exact stepping of `ln x`.
    Log,
    /// Exact stepping of `x` with constant coefficients.
    Linear,
    /// Euler in `x`.
    Euler,
}

/// Immutable per-run data shared by every path.
pub(crate) struct Engine<'a> {
    model: &'a ModelSpec,
    q: &'a GeneratorMatrix,
    strategy: &'a StrategySpec,
    f: &'a YieldFunction,
    scheme: Scheme,
    /// Per-regime drift and volatility of the stepped coordinate.
    a: Vec<f64>,
    s: Vec<f64>,
    a_dt: Vec<f64>,
    s_dt: Vec<f64>,
    dt: f64,
    horizon: f64,
    level: f64,
    level_u: f64,
    pub stop_when_exhausted: bool,
}

impl<'a> Engine<'a> {
    pub fn new(
        model: &'a ModelSpec,
        q: &'a GeneratorMatrix,
        strategy: &'a StrategySpec,
        f: &'a YieldFunction,
        dt: f64,
        horizon: f64,
        level: f64,
    ) -> Result<Self, SimError> {
        model.validate()?;
        let m = q.m();
        if model.m() != m {
            return Err(ModelError::DimensionMismatch { what: "model", got: model.m(), expected: m }.into());
        }
        f.validate(m)?;
        strategy.validate(m, horizon)?;
        let (scheme, a, s) = match model {
            ModelSpec::Gbm { mu, sigma } => {
                (Scheme::Log, mu.iter().zip(sigma).map(|(m, s)| m - 0.5 * s * s).collect(), sigma.clone())
            }
            ModelSpec::Abm { drift, sigma } => (Scheme::Linear, drift.clone(), sigma.clone()),
            ModelSpec::Tabulated(_) => (Scheme::Euler, vec![0.0; m], vec![0.0; m]),
        };
        let a_dt = a.iter().map(|v| v * dt).collect();
        let s_dt = s.iter().map(|v| v * dt.sqrt()).collect();
        let mut e = Self {
            model,
            q,
            strategy,
            f,
            scheme,
            a,
            s,
            a_dt,
            s_dt,
            dt,
            horizon,
            level,
            level_u: 0.0,
            stop_when_exhausted: false,
        };
        e.level_u = e.coord(level);
        Ok(e)
    }

    /// Grid times `k·dt` for `k < grid_len()` cover `[0, horizon]`.
    pub fn grid_len(&self) -> usize {
        (self.horizon / self.dt).ceil() as usize + 2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    fn coord(&self, x: f64) -> f64 {
        match self.scheme {
            Scheme::Log => {
                if x > 0.0 {
                    x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ => x,
        }
    }

    #[inline]
    fn state(&self, u: f64) -> f64 {
        match self.scheme {
            Scheme::Log => u.exp(),
            _ => u,
        }
    }

    #[inline]
    fn advance(&self, u: f64, regime: usize, h: Option<f64>, z: f64) -> f64 {
        match (self.scheme, h) {
            (Scheme::Euler, h) => {
                let h = h.unwrap_or(self.dt);
                let drift = self.model.drift_unchecked(u, regime);
                let vol = self.model.diffusion_unchecked(u, regime);
                u + drift * h + vol * h.sqrt() * z
            }
            (_, None) => u + (self.a_dt[regime] + self.s_dt[regime] * z),
            (_, Some(h)) => u + self.a[regime] * h + self.s[regime] * h.sqrt() * z,
        }
    }

    /// Quiet band of the stepped coordinate; leaving it requires a strategy query.
    #[inline]
    fn band(&self, strat: &StrategyState, regime: usize) -> (f64, f64) {
        let (lo, hi) = strat.quiet_band(regime);
        (self.coord(lo.max(self.level)).max(self.level_u), if hi.is_finite() { self.coord(hi) } else { hi })
    }

    /// Runs one path. `negate` flips every Brownian increment (antithetic partner).
    pub fn run<O: Observer>(&self, x0: f64, a0: usize, seed: u64, negate: bool, obs: &mut O) -> PathEnd {
        let mut noise: SimRng = stream_rng(seed, STREAM_NOISE);
        let sign = if negate { -1.0 } else { 1.0 };
        let mut normal = move || -> f64 { sign * noise.sample::<f64, _>(StandardNormal) };
        let mut chain = ChainSampler::new(self.q, a0, stream_rng(seed, STREAM_CHAIN));
        let mut next_jump = chain.next_jump();
        let mut strat = StrategyState::new(self.strategy, self.horizon);

        let mut t = 0.0;
        let mut k: u64 = 0;
        let mut on_grid = true;
        let mut regime = a0;
        let mut x = x0;
        let mut z_cum = 0.0;

        macro_rules! finish {
            ($end:expr) => {
                return PathEnd { end: $end, t, x: x.max(0.0), regime }
            };
        }

        if x <= self.level {
            obs.point(t, x, regime, z_cum, 0.0);
            finish!(EndState::Extinct);
        }
        let atom = self.query(&mut strat, t, Some(0), &mut x, a0, regime, &mut z_cum, obs);
        let mut u = self.coord(x);
        obs.point(t, x, regime, z_cum, atom);
        if let Some(end) = self.terminal(x, &strat) {
            finish!(end);
        }

        loop {
            if t >= self.horizon {
                finish!(EndState::Truncated);
            }
            let t_jump = next_jump.map_or(f64::INFINITY, |j| j.0);
            let t_event = strat.next_event_time();
            let t_star = t_jump.min(t_event).min(self.horizon);

            if on_grid {
                let (mut lo, mut hi) = self.band(&strat, regime);
                let mut refl = self.reflection(&strat, regime);
                let (a_dt, s_dt) = (self.a_dt[regime], self.s_dt[regime]);
                let euler = matches!(self.scheme, Scheme::Euler);
                // first grid index at or beyond t_star
                let mut k_end = (t_star / self.dt).ceil() as u64;
                while k_end > k + 1 && ((k_end - 1) as f64) * self.dt >= t_star {
                    k_end -= 1;
                }
                while (k_end as f64) * self.dt < t_star {
                    k_end += 1;
                }
                while k + 1 < k_end {
                    k += 1;
                    let dw = normal();
                    u = if euler { self.advance(u, regime, None, dw) } else { u + (a_dt + s_dt * dw) };
                    if u > lo && u < hi {
                        if O::RECORD {
                            obs.point(k as f64 * self.dt, self.state(u), regime, z_cum, 0.0);
                        }
                        continue;
                    }
                    t = k as f64 * self.dt;
                    // Same arithmetic as a query answered by a pure reflection.
                    if let (Some((b, b_u, price)), true) = (refl, u > lo) {
                        let xu = self.state(u);
                        if xu > b {
                            let dl = xu - b;
                            u = b_u;
                            let ev = HarvestEvent { t, amount: dl, x: b, regime, kind: HarvestKind::Reflection };
                            obs.harvest(ev, price, Some(k));
                            z_cum += dl;
                        }
                        if O::RECORD {
                            obs.point(t, self.state(u), regime, z_cum, 0.0);
                        }
                        continue;
                    }
                    x = self.state(u);
                    if x <= self.level {
                        obs.point(t, x, regime, z_cum, 0.0);
                        finish!(EndState::Extinct);
                    }
                    let x_before = x;
                    let atom = self.query(&mut strat, t, Some(k), &mut x, regime, regime, &mut z_cum, obs);
                    if x != x_before {
                        u = self.coord(x);
                    }
                    obs.point(t, x, regime, z_cum, atom);
                    if let Some(end) = self.terminal(x, &strat) {
                        finish!(end);
                    }
                    (lo, hi) = self.band(&strat, regime);
                    refl = self.reflection(&strat, regime);
                }
                t = k as f64 * self.dt;
            }

            // One partial or full step to the next grid point or special time.
            let next_grid = (k + 1) as f64 * self.dt;
            let target = t_star.min(next_grid);
            let full = on_grid && target == next_grid;
            u = self.advance(u, regime, if full { None } else { Some(target - t) }, normal());
            t = target;
            if target == next_grid {
                k += 1;
                on_grid = true;
            } else {
                on_grid = false;
            }

            let regime_left = regime;
            let jumped = t == t_jump;
            if jumped {
                regime = next_jump.expect("jump time is finite").1;
                next_jump = chain.next_jump();
            }
            x = self.state(u);
            if x <= self.level {
                obs.point(t, x, regime, z_cum, 0.0);
                finish!(EndState::Extinct);
            }
            let (lo, hi) = self.band(&strat, regime);
            let mut atom = 0.0;
            if jumped || t >= t_event || !(u > lo && u < hi) {
                let x_before = x;
                atom = self.query(&mut strat, t, on_grid.then_some(k), &mut x, regime_left, regime, &mut z_cum, obs);
                if x != x_before {
                    u = self.coord(x);
                }
            }
            obs.point(t, x, regime, z_cum, atom);
            if let Some(end) = self.terminal(x, &strat) {
                finish!(end);
            }
        }
    }

    /// Barrier level, its coordinate and its price when top exits are pure reflections.
    #[inline]
    fn reflection(&self, strat: &StrategyState, regime: usize) -> Option<(f64, f64, f64)> {
        strat
            .reflecting_barrier()
            .filter(|&b| b > self.level)
            .map(|b| (b, self.coord(b), self.f.eval_unchecked(b, regime)))
    }

    fn terminal(&self, x: f64, strat: &StrategyState) -> Option<EndState> {
        if x <= self.level {
            Some(EndState::Extinct)
        } else if self.stop_when_exhausted && strat.done() {
            Some(EndState::Exhausted)
        } else {
            None
        }
    }

    /// Applies every action due at `t`; returns the total atom removed.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn query<O: Observer>(
        &self,
        strat: &mut StrategyState,
        t: f64,
        grid: Option<u64>,
        x: &mut f64,
        regime_left: usize,
        regime: usize,
        z_cum: &mut f64,
        obs: &mut O,
    ) -> f64 {
        let mut total = 0.0;
        for _ in 0..MAX_QUERIES_PER_INSTANT {
            let act = strategy_step(strat, t, *x, regime);
            if act.atom > 0.0 {
                let price = self.f.eval_unchecked(*x, regime_left);
                obs.harvest(
                    HarvestEvent { t, amount: act.atom, x: *x, regime: regime_left, kind: HarvestKind::Atom },
                    price,
                    grid,
                );
                *x = (*x - act.atom).max(0.0);
                *z_cum += act.atom;
                total += act.atom;
            }
            if let Some(b) = act.reflect_at {
                if *x > b {
                    let dl = *x - b;
                    *x = b;
                    let price = self.f.eval_unchecked(b, regime);
                    obs.harvest(HarvestEvent { t, amount: dl, x: b, regime, kind: HarvestKind::Reflection }, price, grid);
                    *z_cum += dl;
                }
            }
            if !act.again {
                break;
            }
        }
        total
    }
}

fn check_initial(x0: f64, a0: usize, q: &GeneratorMatrix) -> Result<(), SimError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(SimError::NonPositiveInitial(x0));
    }
    if a0 >= q.m() {
        return Err(CtmcError::RegimeOutOfRange { regime: a0, m: q.m() }.into());
    }
    Ok(())
}

fn record(engine: &Engine<'_>, x0: f64, a0: usize, seed: u64) -> HarvestedPath {
    let mut rec = Recorder::new();
    let end = engine.run(x0, a0, seed, false, &mut rec);
    let mut path = rec.path.take().expect("recorder is live");
    path.end = end.end;
    path.truncated = end.end == EndState::Truncated;
    path.tau = (end.end == EndState::Extinct).then_some(end.t);
    path
}

/// Uncontrolled dynamics; stops at extinction or the horizon.
pub fn simulate_uncontrolled(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    x0: f64,
    a0: usize,
    cfg: &SimConfig,
) -> Result<HarvestedPath, SimError> {
    cfg.validate()?;
    check_initial(x0, a0, q)?;
    let f = YieldFunction::unit(q.m());
    let engine = Engine::new(model, q, &StrategySpec::NoHarvest, &f, cfg.dt, cfg.horizon, cfg.extinction_level)?;
    Ok(record(&engine, x0, a0, cfg.seed))
}

/// Dynamics under `strategy`; the path runs to extinction or the horizon even
/// after the strategy has stopped harvesting.
pub fn simulate_harvested(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    strategy: &StrategySpec,
    f: &YieldFunction,
    x0: f64,
    a0: usize,
    cfg: &SimConfig,
) -> Result<HarvestedPath, SimError> {
    cfg.validate()?;
    check_initial(x0, a0, q)?;
    let engine = Engine::new(model, q, strategy, f, cfg.dt, cfg.horizon, cfg.extinction_level)?;
    Ok(record(&engine, x0, a0, cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::simulate_chain;

    fn q2() -> GeneratorMatrix {
        GeneratorMatrix::two_state(1.0, 1.0).unwrap()
    }

    #[test]
    fn deterministic_growth() {
        let model = ModelSpec::gbm(&[0.1], &[0.0]).unwrap();
        let cfg = SimConfig::new(1e-3, 1.0, 1);
        let p = simulate_uncontrolled(&model, &GeneratorMatrix::single_regime(), 1.0, 0, &cfg).unwrap();
        assert!((p.final_x() - 0.1f64.exp()).abs() < 1e-3);
        assert!(p.truncated);
        assert!((p.times.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(p.z_cum.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn abm_euler_and_tabulated_agree_with_zero_noise() {
        let abm = ModelSpec::abm(&[0.5], &[1e-300]).unwrap();
        let tab = ModelSpec::custom(1, std::sync::Arc::new(|_, _| 0.5), std::sync::Arc::new(|_, _| 0.0));
        let cfg = SimConfig::new(0.01, 2.0, 3);
        let q = GeneratorMatrix::single_regime();
        let a = simulate_uncontrolled(&abm, &q, 1.0, 0, &cfg).unwrap();
        let b = simulate_uncontrolled(&tab, &q, 1.0, 0, &cfg).unwrap();
        assert!((a.final_x() - 2.0).abs() < 1e-9);
        assert!((b.final_x() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn abm_goes_extinct() {
        let model = ModelSpec::abm(&[-1.0], &[0.1]).unwrap();
        let cfg = SimConfig::new(1e-3, 10.0, 5);
        let p = simulate_uncontrolled(&model, &GeneratorMatrix::single_regime(), 1.0, 0, &cfg).unwrap();
        let tau = p.tau.unwrap();
        assert!((tau - 1.0).abs() < 0.2, "{tau}");
        assert_eq!(p.final_x(), 0.0);
        assert!(p.x[..p.x.len() - 1].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn grid_includes_jump_times() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let cfg = SimConfig::new(0.01, 5.0, 11);
        let p = simulate_uncontrolled(&model, &q2(), 1.0, 0, &cfg).unwrap();
        let chain = simulate_chain(&q2(), 0, 5.0, 11).unwrap();
        assert!(!chain.jump_times.is_empty());
        for (k, &tj) in chain.jump_times.iter().enumerate() {
            let i = p.times.iter().position(|&t| t == tj).expect("jump time on grid");
            assert_eq!(p.regime[i], chain.regimes[k + 1]);
            assert_eq!(p.regime[i - 1], chain.regimes[k]);
        }
        assert!(p.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn instant_depletion_path() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let cfg = SimConfig::new(1e-3, 1.0, 2);
        let f = YieldFunction::unit(2);
        let p = simulate_harvested(&model, &q2(), &StrategySpec::InstantDepletion, &f, 5.0, 1, &cfg).unwrap();
        assert_eq!(p.z_jumps, vec![(0.0, 5.0)]);
        assert_eq!(p.tau, Some(0.0));
        assert_eq!(p.end, EndState::Extinct);
    }

    #[test]
    fn regime_trigger_hits_first_jump() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let f = YieldFunction::unit(2);
        let spec = StrategySpec::RegimeTriggeredDepletion { trigger: vec![0] };
        for seed in 0..50 {
            let cfg = SimConfig::new(1e-3, 30.0, seed);
            let p = simulate_harvested(&model, &q2(), &spec, &f, 1.0, 1, &cfg).unwrap();
            let chain = simulate_chain(&q2(), 1, 30.0, seed).unwrap();
            let tj = chain.jump_times[0];
            assert_eq!(p.tau, Some(tj));
            let (t, dz) = p.z_jumps[0];
            assert_eq!(t, tj);
            assert_eq!(p.z_jumps.len(), 1);
            assert_eq!(p.harvests[0].x, dz);
            assert_eq!(p.harvests[0].regime, 1);
            assert_eq!(p.final_x(), 0.0);
        }
    }

    #[test]
    fn barrier_bounds_the_state() {
        let model = ModelSpec::gbm(&[1.0, 1.5], &[2f64.sqrt(), 2.0]).unwrap();
        let f = YieldFunction::PowerDecay { gamma: 0.75 };
        let spec = StrategySpec::Barrier { b: 2.0, rho: None };
        let cfg = SimConfig::new(1e-3, 5.0, 9);
        let p = simulate_harvested(&model, &q2(), &spec, &f, 1.0, 0, &cfg).unwrap();
        assert!(p.x.iter().all(|&x| x <= 2.0));
        assert!(p.harvests.iter().all(|h| h.kind == HarvestKind::Reflection));
        assert!(p.z_cum.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn harvested_never_exceeds_uncontrolled() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let f = YieldFunction::unit(2);
        let cfg = SimConfig::new(1e-3, 5.0, 21);
        let free = simulate_uncontrolled(&model, &q2(), 1.5, 0, &cfg).unwrap();
        let spec = StrategySpec::Barrier { b: 1.6, rho: None };
        let cut = simulate_harvested(&model, &q2(), &spec, &f, 1.5, 0, &cfg).unwrap();
        assert_eq!(free.times, cut.times);
        assert!(free.x.iter().zip(&cut.x).all(|(a, b)| b <= a));
    }

    #[test]
    fn chattering_on_static_model_removes_exact_amount() {
        let model = ModelSpec::gbm(&[0.0], &[0.0]).unwrap();
        let f = YieldFunction::unit(1);
        let spec = StrategySpec::Chattering { n: 4, target: 0.25 };
        let cfg = SimConfig::new(1e-3, 1.0, 0);
        let p = simulate_harvested(&model, &GeneratorMatrix::single_regime(), &spec, &f, 1.0, 0, &cfg).unwrap();
        assert_eq!(p.z_jumps.len(), 4);
        assert!((p.total_harvest() - 0.75).abs() < 1e-15);
        let tick = 4f64.powi(-6);
        for (i, (t, _)) in p.z_jumps.iter().enumerate() {
            assert_eq!(*t, i as f64 * tick);
        }
    }

    #[test]
    fn composite_switches_to_barrier() {
        let model = ModelSpec::gbm(&[1.0, 1.5], &[2f64.sqrt(), 2.0]).unwrap();
        let f = YieldFunction::PowerDecay { gamma: 0.75 };
        let spec = StrategySpec::composite(
            StrategySpec::Chattering { n: 4, target: 2.0 },
            2.0,
            StrategySpec::Barrier { b: 2.0, rho: Some(0.002) },
        );
        let cfg = SimConfig::new(1e-3, 1.0, 4);
        let p = simulate_harvested(&model, &q2(), &spec, &f, 3.0, 0, &cfg).unwrap();
        let atoms: Vec<f64> = p.z_jumps.iter().map(|z| z.1).collect();
        assert!(atoms.len() >= 5, "{atoms:?}");
        assert_eq!(*atoms.last().unwrap(), 0.002);
        let t_switch = p.z_jumps.last().unwrap().0;
        let after = p.times.iter().position(|&t| t == t_switch).unwrap();
        assert!(p.x[after..].iter().all(|&x| x <= 2.0));
    }

    #[test]
    fn seeds_reproduce() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let cfg = SimConfig::new(1e-2, 3.0, 77);
        let a = simulate_uncontrolled(&model, &q2(), 1.0, 0, &cfg).unwrap();
        let b = simulate_uncontrolled(&model, &q2(), 1.0, 0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_uncontrolled(&model, &q2(), 1.0, 0, &SimConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn rejects_bad_input() {
        let model = ModelSpec::gbm(&[0.05], &[0.3]).unwrap();
        let q = GeneratorMatrix::single_regime();
        let cfg = SimConfig::new(1e-2, 3.0, 77);
        assert!(matches!(simulate_uncontrolled(&model, &q, 0.0, 0, &cfg), Err(SimError::NonPositiveInitial(_))));
        assert!(simulate_uncontrolled(&model, &q, 1.0, 0, &SimConfig::new(1.0, 0.5, 0)).is_err());
        let f = YieldFunction::unit(1);
        let spec = StrategySpec::Chattering { n: 500, target: 0.0 };
        assert!(matches!(
            simulate_harvested(&model, &q, &spec, &f, 1.0, 0, &cfg),
            Err(SimError::StrategyScheduleOverflow(_))
        ));
    }
}
