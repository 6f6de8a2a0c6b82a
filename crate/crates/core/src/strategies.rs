//! Harvesting policies as event-driven state machines.
//!
//! A policy is described by an immutable [`StrategySpec`]; each simulated path
//! owns a [`StrategyState`] built from it. The simulator asks the state for an
//! [`Action`] at `t = 0`, after every chain jump, at every scheduled event
//! time, and whenever the population leaves the policy's quiet band.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative distance to the barrier below which a starting state counts as "at `b`".
const AT_BARRIER_RTOL: f64 = 1e-12;
/// Default initial atom of a barrier policy started at `b`, as a fraction of `b`.
pub const DEFAULT_RHO_FRACTION: f64 = 1e-3;
/// Nesting bound for composite policies.
pub const MAX_COMPOSITE_DEPTH: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("chattering resolution n = {n} gives event spacing {spacing:e}, below the resolution of horizon {horizon}")]
    ScheduleUnderflow { n: u32, spacing: f64, horizon: f64 },
    #[error("invalid strategy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    NoHarvest,
    /// Harvest the whole state at activation.
    InstantDepletion,
    /// `n` atoms over the window `[0, n^-5)` stepping the state down to `target`.
    Chattering { n: u32, target: f64 },
    /// Deplete fully on the first visit to any of the `trigger` regimes.
    RegimeTriggeredDepletion { trigger: Vec<usize> },
    /// Reflect at `b`; a start at `b` first removes an atom `rho`.
    Barrier {
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
    },
    /// Harvest `level` on the first visit to `[level, ∞) × {regime}`, then stop.
    ThresholdExport { level: f64, regime: usize },
    /// Run `first` until the state is first at or below `switch_level`, then `then`.
    Composite { first: Box<StrategySpec>, switch_level: f64, then: Box<StrategySpec> },
}

impl StrategySpec {
    pub fn composite(first: StrategySpec, switch_level: f64, then: StrategySpec) -> Self {
        StrategySpec::Composite { first: Box::new(first), switch_level, then: Box::new(then) }
    }

    /// Short human-readable label used in tables.
    pub fn label(&self) -> String {
        match self {
            StrategySpec::NoHarvest => "no_harvest".into(),
            StrategySpec::InstantDepletion => "instant_depletion".into(),
            StrategySpec::Chattering { n, target } => format!("chattering(n={n};target={target})"),
            StrategySpec::RegimeTriggeredDepletion { trigger } => {
                let t: Vec<String> = trigger.iter().map(usize::to_string).collect();
                format!("regime_triggered({})", t.join("|"))
            }
            StrategySpec::Barrier { b, rho: None } => format!("barrier(b={b})"),
            StrategySpec::Barrier { b, rho: Some(r) } => format!("barrier(b={b};rho={r})"),
            StrategySpec::ThresholdExport { level, regime } => format!("threshold_export(M={level};regime={regime})"),
            StrategySpec::Composite { first, switch_level, then } => {
                format!("composite({};{};{})", first.label(), switch_level, then.label())
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            StrategySpec::Composite { first, then, .. } => 1 + first.depth().max(then.depth()),
            _ => 0,
        }
    }

    /// Structural checks against the regime count `m` and the simulated horizon.
    pub fn validate(&self, m: usize, horizon: f64) -> Result<(), StrategyError> {
        let bad = |s: String| Err(StrategyError::Invalid(s));
        match self {
            StrategySpec::NoHarvest | StrategySpec::InstantDepletion => {}
            StrategySpec::Chattering { n, target } => {
                if *n < 1 {
                    return bad("chattering needs n >= 1".into());
                }
                if !(*target >= 0.0 && target.is_finite()) {
                    return bad(format!("chattering target {target} must be finite and >= 0"));
                }
                check_resolution(*n, horizon)?;
            }
            StrategySpec::RegimeTriggeredDepletion { trigger } => {
                if let Some(a) = trigger.iter().find(|&&a| a >= m) {
                    return bad(format!("trigger regime {a} out of range for {m} regimes"));
                }
            }
            StrategySpec::Barrier { b, rho } => {
                if !(*b > 0.0 && b.is_finite()) {
                    return bad(format!("barrier level {b} must be positive"));
                }
                if let Some(r) = rho {
                    if !(*r >= 0.0 && r.is_finite()) {
                        return bad(format!("initial atom {r} must be >= 0"));
                    }
                }
            }
            StrategySpec::ThresholdExport { level, regime } => {
                if !(*level > 0.0 && level.is_finite()) {
                    return bad(format!("export level {level} must be positive"));
                }
                if *regime >= m {
                    return bad(format!("export regime {regime} out of range for {m} regimes"));
                }
            }
            StrategySpec::Composite { first, switch_level, then } => {
                if self.depth() > MAX_COMPOSITE_DEPTH {
                    return bad(format!("composite nesting depth {} exceeds {MAX_COMPOSITE_DEPTH}", self.depth()));
                }
                if !(*switch_level >= 0.0 && switch_level.is_finite()) {
                    return bad(format!("switch level {switch_level} must be >= 0"));
                }
                first.validate(m, horizon)?;
                then.validate(m, horizon)?;
            }
        }
        Ok(())
    }
}

fn chattering_tick(n: u32) -> f64 {
    let n = n as f64;
    n.powi(-5) / n
}

fn check_resolution(n: u32, horizon: f64) -> Result<(), StrategyError> {
    let spacing = chattering_tick(n);
    if n > 1 && spacing < horizon * 2f64.powi(-40) {
        return Err(StrategyError::ScheduleUnderflow { n, spacing, horizon });
    }
    Ok(())
}

/// Event times `t_i` (relative to activation) and the level after each event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatteringSchedule {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
}

/// Schedule of `n` atoms taking `x0` down to `target`: `δ = (x0 - target)/n`,
/// `t_i = i·n^-5/n`, level `x0 - (i+1)δ` after event `i`, the last one exactly `target`.
pub fn chattering_schedule(x0: f64, target: f64, n: u32, horizon: f64) -> Result<ChatteringSchedule, StrategyError> {
    if n < 1 {
        return Err(StrategyError::Invalid("chattering needs n >= 1".into()));
    }
    if x0 < target || target < 0.0 {
        return Err(StrategyError::Invalid(format!("need x0 >= target >= 0, got x0 = {x0}, target = {target}")));
    }
    check_resolution(n, horizon)?;
    if x0 == target {
        return Ok(ChatteringSchedule { times: Vec::new(), levels: Vec::new() });
    }
    let delta = (x0 - target) / n as f64;
    let tick = chattering_tick(n);
    let times = (0..n).map(|i| i as f64 * tick).collect();
    let levels = (0..n).map(|i| if i + 1 == n { target } else { x0 - (i + 1) as f64 * delta }).collect();
    Ok(ChatteringSchedule { times, levels })
}

/// Event times the simulator must hit exactly, relative to activation of the
/// policy (for composites, the second policy's times are relative to the switch).
pub fn requires_event_times(spec: &StrategySpec) -> Option<Vec<f64>> {
    match spec {
        StrategySpec::InstantDepletion => Some(vec![0.0]),
        StrategySpec::Chattering { n, .. } => Some((0..*n).map(|i| i as f64 * chattering_tick(*n)).collect()),
        StrategySpec::Composite { first, then, .. } => {
            let mut all: Vec<f64> = [requires_event_times(first), requires_event_times(then)]
                .into_iter()
                .flatten()
                .flatten()
                .collect();
            if all.is_empty() {
                return None;
            }
            all.sort_by(f64::total_cmp);
            all.dedup();
            Some(all)
        }
        _ => None,
    }
}

/// What the simulator must do at one query. The atom is removed first; then,
/// if `reflect_at` is set, the state is projected onto `(-∞, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub atom: f64,
    pub reflect_at: Option<f64>,
    /// The policy changed phase; query again at the same instant with the new state.
    pub again: bool,
    pub done: bool,
}

#[derive(Debug, Clone)]
enum Node {
    NoHarvest,
    Instant { fired: bool },
    Chattering { n: u32, target: f64, schedule: Option<(f64, ChatteringSchedule)>, next: usize },
    Triggered { trigger: Vec<usize>, fired: bool },
    Barrier { b: f64, rho: f64, started: bool },
    Threshold { level: f64, regime: usize, fired: bool },
    Composite { first: Box<Node>, switch_level: f64, then: Box<Node>, switched: bool },
}

impl Node {
    fn new(spec: &StrategySpec) -> Self {
        match spec {
            StrategySpec::NoHarvest => Node::NoHarvest,
            StrategySpec::InstantDepletion => Node::Instant { fired: false },
            StrategySpec::Chattering { n, target } => Node::Chattering { n: *n, target: *target, schedule: None, next: 0 },
            StrategySpec::RegimeTriggeredDepletion { trigger } => Node::Triggered { trigger: trigger.clone(), fired: false },
            StrategySpec::Barrier { b, rho } => {
                Node::Barrier { b: *b, rho: rho.unwrap_or(DEFAULT_RHO_FRACTION * b), started: false }
            }
            StrategySpec::ThresholdExport { level, regime } => {
                Node::Threshold { level: *level, regime: *regime, fired: false }
            }
            StrategySpec::Composite { first, switch_level, then } => Node::Composite {
                first: Box::new(Node::new(first)),
                switch_level: *switch_level,
                then: Box::new(Node::new(then)),
                switched: false,
            },
        }
    }

    fn done(&self) -> bool {
        match self {
            Node::NoHarvest => true,
            Node::Instant { fired } | Node::Triggered { fired, .. } | Node::Threshold { fired, .. } => *fired,
            Node::Chattering { schedule: Some((_, s)), next, .. } => *next >= s.times.len(),
            Node::Chattering { schedule: None, .. } => false,
            Node::Barrier { .. } => false,
            Node::Composite { then, switched, .. } => *switched && then.done(),
        }
    }

    fn next_event_time(&self) -> f64 {
        match self {
            Node::Instant { fired: false } => 0.0,
            Node::Chattering { schedule: Some((start, s)), next, .. } => {
                s.times.get(*next).map_or(f64::INFINITY, |t| start + t)
            }
            Node::Composite { first, then, switched, .. } => {
                if *switched {
                    then.next_event_time()
                } else {
                    first.next_event_time()
                }
            }
            _ => f64::INFINITY,
        }
    }

    fn reflecting_barrier(&self) -> Option<f64> {
        match self {
            Node::Barrier { b, started: true, .. } => Some(*b),
            Node::Composite { then, switched: true, .. } => then.reflecting_barrier(),
            _ => None,
        }
    }

    fn quiet_band(&self, regime: usize) -> (f64, f64) {
        const ALL: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
        match self {
            Node::Barrier { b, started: true, .. } => (f64::NEG_INFINITY, *b),
            Node::Barrier { started: false, .. } => (f64::INFINITY, f64::NEG_INFINITY),
            Node::Threshold { level, regime: k, fired: false } if *k == regime => (f64::NEG_INFINITY, *level),
            Node::Composite { first, switch_level, then, switched } => {
                if *switched {
                    then.quiet_band(regime)
                } else {
                    let (lo, hi) = first.quiet_band(regime);
                    (lo.max(*switch_level), hi)
                }
            }
            _ => ALL,
        }
    }

    fn step(&mut self, t: f64, x: f64, regime: usize, horizon: f64) -> Action {
        let done = |a: Action, n: &Node| Action { done: n.done(), ..a };
        let mut act = Action::default();
        match self {
            Node::NoHarvest => {}
            Node::Instant { fired } => {
                if !*fired {
                    act.atom = x;
                    *fired = true;
                }
            }
            Node::Chattering { n, target, schedule, next } => {
                if schedule.is_none() {
                    let s = if x > *target {
                        // validated against the horizon up front
                        chattering_schedule(x, *target, *n, horizon).unwrap_or(ChatteringSchedule {
                            times: vec![0.0],
                            levels: vec![*target],
                        })
                    } else {
                        ChatteringSchedule { times: Vec::new(), levels: Vec::new() }
                    };
                    *schedule = Some((t, s));
                }
                let (start, s) = schedule.as_ref().expect("schedule set above");
                if let Some(&ti) = s.times.get(*next) {
                    if t >= start + ti {
                        act.atom = (x - s.levels[*next]).max(0.0);
                        *next += 1;
                    }
                }
            }
            Node::Triggered { trigger, fired } => {
                if !*fired && trigger.contains(&regime) {
                    act.atom = x;
                    *fired = true;
                }
            }
            Node::Barrier { b, rho, started } => {
                if !*started {
                    *started = true;
                    if (x - *b).abs() <= AT_BARRIER_RTOL * b.max(1.0) {
                        act.atom = rho.min(x);
                    }
                }
                act.reflect_at = Some(*b);
            }
            Node::Threshold { level, regime: k, fired } => {
                if !*fired && regime == *k && x >= *level {
                    act.atom = *level;
                    *fired = true;
                }
            }
            Node::Composite { first, switch_level, then, switched } => {
                if *switched {
                    act = then.step(t, x, regime, horizon);
                } else if x <= *switch_level {
                    *switched = true;
                    act.again = true;
                } else {
                    act = first.step(t, x, regime, horizon);
                    let mut post = x - act.atom;
                    if let Some(b) = act.reflect_at {
                        post = post.min(b);
                    }
                    if post <= *switch_level {
                        *switched = true;
                        act.again = true;
                    }
                }
            }
        }
        done(act, self)
    }
}

/// Per-path mutable state of a policy.
#[derive(Debug, Clone)]
pub struct StrategyState {
    node: Node,
    horizon: f64,
}

impl StrategyState {
    /// `horizon` bounds the times the policy will be queried at.
    pub fn new(spec: &StrategySpec, horizon: f64) -> Self {
        Self { node: Node::new(spec), horizon }
    }

    pub fn done(&self) -> bool {
        self.node.done()
    }

    /// Earliest time at which the policy must be queried regardless of the state.
    pub fn next_event_time(&self) -> f64 {
        self.node.next_event_time()
    }

    /// The policy takes no action while `lo < x < hi` in `regime`, before
    /// [`next_event_time`](Self::next_event_time) and between chain jumps.
    pub fn quiet_band(&self, regime: usize) -> (f64, f64) {
        if self.node.done() {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        self.node.quiet_band(regime)
    }

    /// `Some(b)` while every exit through the top of the quiet band is answered
    /// by a pure reflection at `b` with no change of policy state.
    pub fn reflecting_barrier(&self) -> Option<f64> {
        self.node.reflecting_barrier()
    }
}

/// One transition of the policy state machine at time `t` with pre-action state `x_pre`.
/// The atom never exceeds `x_pre`.
pub fn strategy_step(state: &mut StrategyState, t: f64, x_pre: f64, regime: usize) -> Action {
    let x = x_pre.max(0.0);
    let mut act = state.node.step(t, x, regime, state.horizon);
    act.atom = act.atom.clamp(0.0, x);
    act
}
