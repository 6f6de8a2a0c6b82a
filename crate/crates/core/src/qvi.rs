//! Residual checks of candidate value functions on a grid: the quasi-variational
//! inequalities `max{(𝓛 - r)φ, f - φ'} = 0`, the sign of `(𝓛 - r)g`, Lyapunov
//! conditions, and a Monte Carlo dynamic-programming gap.
//!
//! Residuals on smooth closed forms are evidence, not proof: a residual check is
//! neither necessary nor sufficient for the viscosity property of a non-smooth
//! function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{g_integral, AnalyticError};
use crate::ctmc::GeneratorMatrix;
use crate::fd;
use crate::model::{generator_apply, GridFunction, ModelError, ModelSpec, YieldFunction};
use crate::payoff::{mean_stderr, run_paths, units, McConfig};
use crate::simulate::{EndState, Engine, SimError};
use crate::strategies::StrategySpec;

/// Left-end power exponent below which `W` is not considered to vanish at 0.
pub const MIN_VANISHING_EXPONENT: f64 = 0.05;
const ROUNDING_FACTOR: f64 = 32.0;

#[derive(Debug, Error)]
pub enum QviError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
}

/// Threshold separating `|f - φ'| ≈ 0` from a strict inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QviTolerance {
    /// `safety · |c_i φ'''(x_i)|` plus a rounding floor, where `c_i φ'''` is the
    /// leading truncation term of the three-point derivative at `x_i`.
    Adaptive { safety: f64 },
    Fixed { tol: f64 },
}

impl Default for QviTolerance {
    fn default() -> Self {
        QviTolerance::Adaptive { safety: 0.5 }
    }
}

impl QviTolerance {
    fn validate(&self) -> Result<(), QviError> {
        let v = match *self {
            QviTolerance::Adaptive { safety } => safety,
            QviTolerance::Fixed { tol } => tol,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(QviError::InvalidTolerance(format!("{self:?} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Continuation,
    Harvest,
    Violation,
}

/// One CSV row of a [`QviReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QviPoint {
    pub x: f64,
    pub regime: usize,
    /// `(𝓛 - r)φ`.
    pub pde_residual: f64,
    /// `f - φ'`, with `φ'` the three-point derivative corrected by its leading truncation term.
    pub gradient_residual: f64,
    pub tol: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QviReport {
    pub points: Vec<QviPoint>,
    /// `max over points of max{pde, gradient}⁺`.
    pub max_violation: f64,
    /// `max over points of min{|pde|, |gradient|}`.
    pub complementarity_gap: f64,
    pub tolerance: QviTolerance,
}

/// JSON summary of a [`QviReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QviSummary {
    pub n_points: usize,
    pub m: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub max_violation: f64,
    pub complementarity_gap: f64,
    pub continuation: usize,
    pub harvest: usize,
    pub violation: usize,
    pub tolerance: QviTolerance,
}

impl QviReport {
    pub fn count(&self, region: Region) -> usize {
        self.points.iter().filter(|p| p.region == region).count()
    }

    /// Points of one regime in grid order.
    pub fn regime(&self, regime: usize) -> impl Iterator<Item = &QviPoint> + '_ {
        self.points.iter().filter(move |p| p.regime == regime)
    }

    pub fn summary(&self) -> QviSummary {
        let xs = self.points.iter().map(|p| p.x);
        QviSummary {
            n_points: self.points.len(),
            m: self.points.iter().map(|p| p.regime + 1).max().unwrap_or(0),
            x_min: xs.clone().fold(f64::INFINITY, f64::min),
            x_max: xs.fold(f64::NEG_INFINITY, f64::max),
            max_violation: self.max_violation,
            complementarity_gap: self.complementarity_gap,
            continuation: self.count(Region::Continuation),
            harvest: self.count(Region::Harvest),
            violation: self.count(Region::Violation),
            tolerance: self.tolerance,
        }
    }
}

fn label(gradient: f64, tol: f64) -> Region {
    if gradient < -tol {
        Region::Continuation
    } else if gradient.abs() <= tol {
        Region::Harvest
    } else {
        Region::Violation
    }
}

/// Evaluates both QVI residuals of `phi` at every grid point and regime.
pub fn qvi_check(
    phi: &GridFunction,
    model: &ModelSpec,
    q: &GeneratorMatrix,
    f: &YieldFunction,
    r: f64,
    tol: QviTolerance,
) -> Result<QviReport, QviError> {
    tol.validate()?;
    f.validate(phi.m())?;
    let pde = generator_apply(phi, model, q, r)?;
    let grid = &phi.grid;
    let n = grid.len();
    let d1 = phi.first_derivative();
    let d2 = phi.second_derivative();
    let coef = fd::first_derivative_error_coefficients(grid);
    let mut points = Vec::with_capacity(n * phi.m());
    for a in 0..phi.m() {
        let d3 = fd::first_derivative(grid, &d2[a]);
        let v = &phi.values[a];
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let spacing = (grid[lo + 1] - grid[lo]).min(grid[hi] - grid[hi - 1]);
            let scale = v[lo.min(n - 3)..(hi + 1).max(3)].iter().fold(0.0f64, |m, y| m.max(y.abs()));
            let price = f.eval_unchecked(grid[i], a);
            let floor = ROUNDING_FACTOR * f64::EPSILON * (price.abs() + 2.0 * scale / spacing);
            let truncation = coef[i] * d3[i];
            let gradient = price - (d1[a][i] + truncation);
            let t = match tol {
                QviTolerance::Adaptive { safety } => safety * truncation.abs() + floor,
                QviTolerance::Fixed { tol } => tol,
            };
            points.push(QviPoint {
                x: grid[i],
                regime: a,
                pde_residual: pde.values[a][i],
                gradient_residual: gradient,
                tol: t,
                region: label(gradient, t),
            });
        }
    }
    let max_violation = points.iter().map(|p| p.pde_residual.max(p.gradient_residual).max(0.0)).fold(0.0, f64::max);
    let complementarity_gap =
        points.iter().map(|p| p.pde_residual.abs().min(p.gradient_residual.abs())).fold(0.0, f64::max);
    Ok(QviReport { points, max_violation, complementarity_gap, tolerance: tol })
}

/// Observed convergence orders `ln(e_k/e_{k+1}) / ln(h_k/h_{k+1})` of consecutive levels.
pub fn observed_orders(spacings: &[f64], errors: &[f64]) -> Vec<f64> {
    spacings
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GConditionReport {
    pub holds: bool,
    pub worst_x: f64,
    pub worst_regime: usize,
    pub worst_value: f64,
    /// Number of grid points with `(𝓛 - r)g > tol`, per regime.
    pub violations: Vec<usize>,
    pub values: GridFunction,
}

/// Checks `(𝓛 - r)g ≤ tol` on `grid`, with `g` the antiderivative of the price.
pub fn g_condition_check(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    f: &YieldFunction,
    r: f64,
    grid: &[f64],
    tol: f64,
) -> Result<GConditionReport, QviError> {
    let m = q.m();
    f.validate(m)?;
    let mut values = Vec::with_capacity(m);
    for a in 0..m {
        values.push(grid.iter().map(|&x| g_integral(f, x, a)).collect::<Result<Vec<_>, _>>()?);
    }
    let g = GridFunction::new(grid.to_vec(), values)?;
    let lg = generator_apply(&g, model, q, r)?;
    let (mut worst_x, mut worst_regime, mut worst_value) = (grid[0], 0, f64::NEG_INFINITY);
    let mut violations = vec![0; m];
    for (a, row) in lg.values.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if v > worst_value {
                (worst_x, worst_regime, worst_value) = (grid[i], a, v);
            }
            if v > tol {
                violations[a] += 1;
            }
        }
    }
    Ok(GConditionReport { holds: worst_value <= tol, worst_x, worst_regime, worst_value, violations, values: lg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovFailure {
    /// `𝓛W > tol`.
    Generator,
    /// `W ≤ 0` away from 0.
    NonPositive,
    /// `W` does not tend to 0 at the left end.
    NotVanishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovViolation {
    pub x: f64,
    pub regime: usize,
    pub kind: LyapunovFailure,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub holds: bool,
    pub violations: Vec<LyapunovViolation>,
    pub reasons: Vec<String>,
}

/// Checks `𝓛W ≤ tol`, `W > 0` on the grid, and that `W` vanishes at 0. The last
/// test fits `W ≈ c x^k` through the two leftmost points and requires
/// `k ≥ MIN_VANISHING_EXPONENT`.
pub fn lyapunov_check(w: &GridFunction, model: &ModelSpec, q: &GeneratorMatrix, tol: f64) -> Result<LyapunovReport, QviError> {
    let lw = generator_apply(w, model, q, 0.0)?;
    let g = &w.grid;
    let mut violations = Vec::new();
    let mut reasons = Vec::new();
    for a in 0..w.m() {
        let v = &w.values[a];
        for (i, &x) in g.iter().enumerate() {
            if v[i] <= 0.0 {
                violations.push(LyapunovViolation { x, regime: a, kind: LyapunovFailure::NonPositive, value: v[i] });
            }
            if lw.values[a][i] > tol {
                violations.push(LyapunovViolation { x, regime: a, kind: LyapunovFailure::Generator, value: lw.values[a][i] });
            }
        }
        let k = if v[0] > 0.0 && v[1] > 0.0 { (v[1] / v[0]).ln() / (g[1] / g[0]).ln() } else { f64::NAN };
        if !(k >= MIN_VANISHING_EXPONENT) {
            violations.push(LyapunovViolation { x: g[0], regime: a, kind: LyapunovFailure::NotVanishing, value: v[0] });
            reasons.push(format!(
                "regime {a}: W does not vanish at 0 (local exponent {k:.3} at x = {}, W = {})",
                g[0], v[0]
            ));
        }
    }
    for (kind, text) in [(LyapunovFailure::NonPositive, "W <= 0 at"), (LyapunovFailure::Generator, "LW > tol at")] {
        let count = violations.iter().filter(|v| v.kind == kind).count();
        if count > 0 {
            reasons.push(format!("{text} {count} grid points"));
        }
    }
    Ok(LyapunovReport { holds: violations.is_empty(), violations, reasons })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppRow {
    pub strategy: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    /// Best family member's estimate minus `value_fn(x0, α0)`.
    pub gap: f64,
    pub stderr: f64,
    pub best: usize,
    pub value_at_start: f64,
    pub eta: f64,
    pub rows: Vec<DppRow>,
    pub note: &'static str,
}

const DPP_NOTE: &str = "supremum taken over the listed candidate strategies only";

/// Estimates `max over family of E[income on [0, τ∧η] + e^{-r(τ∧η)} V(X(τ∧η), α(τ∧η))] - V(x0, α0)`
/// with `V = value_fn` and `V = 0` after extinction.
#[allow(clippy::too_many_arguments)]
pub fn dpp_gap(
    model: &ModelSpec,
    q: &GeneratorMatrix,
    family: &[StrategySpec],
    f: &YieldFunction,
    r: f64,
    x0: f64,
    a0: usize,
    eta: f64,
    dt: f64,
    value_fn: &(dyn Fn(f64, usize) -> f64 + Sync),
    mc: &McConfig,
) -> Result<DppReport, SimError> {
    mc.validate()?;
    if family.is_empty() {
        return Err(SimError::InvalidConfig("strategy family is empty".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidConfig(format!("need η >= 0 and dt > 0, got η = {eta}, dt = {dt}")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(SimError::NonPositiveInitial(x0));
    }
    if a0 >= q.m() {
        return Err(crate::ctmc::CtmcError::RegimeOutOfRange { regime: a0, m: q.m() }.into());
    }
    let mut rows = Vec::with_capacity(family.len());
    for strategy in family {
        let engine = Engine::new(model, q, strategy, f, dt, eta, 0.0)?;
        let outcomes = run_paths(&engine, r, x0, a0, mc);
        let samples: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                let tail = match o.end {
                    EndState::Truncated => (-r * o.t_end).exp() * value_fn(o.x_end, o.regime_end),
                    _ => 0.0,
                };
                o.payoff + tail
            })
            .collect();
        let (mean, stderr) = mean_stderr(&units(samples, mc.antithetic));
        rows.push(DppRow { strategy: strategy.label(), mean, stderr });
    }
    let best = (0..rows.len()).fold(0, |b, i| if rows[i].mean > rows[b].mean { i } else { b });
    let value_at_start = value_fn(x0, a0);
    Ok(DppReport {
        gap: rows[best].mean - value_at_start,
        stderr: rows[best].stderr,
        best,
        value_at_start,
        eta,
        rows,
        note: DPP_NOTE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{example1_value, example2_value, Example1Params, Example2Params};
    use crate::model::uniform_grid;

    fn case2() -> Example1Params {
        Example1Params::new([0.05, 0.12], [0.3, 0.2], [1.0, 1.0], 0.1).unwrap()
    }

    fn ex2() -> Example2Params {
        Example2Params { mu: [1.0, 1.5], sigma: [2f64.sqrt(), 2.0], lambda: [1.0, 1.0], r: 0.25, gamma: 0.75 }
    }

    /// Uniform grid with spacing `h` containing `b` as a node.
    fn grid_through(b: f64, h: f64, n: usize, below: usize) -> Vec<f64> {
        (0..n).map(|i| b + (i as f64 - below as f64) * h).collect()
    }

    fn ex2_report(h: f64) -> QviReport {
        let e = ex2();
        let below = (1.5 / h).round() as usize;
        let grid = grid_through(2.0, h, (10.0 / h).round() as usize, below);
        let phi = GridFunction::from_fn(grid, 2, |x, _| example2_value(&e, x).unwrap()).unwrap();
        qvi_check(&phi, &e.model(), &e.generator(), &e.yield_fn(), e.r, QviTolerance::default()).unwrap()
    }

    #[test]
    fn case2_closed_form_residuals() {
        let p = case2();
        let grid = uniform_grid(0.1, 20.0, 2000);
        let phi = GridFunction::from_fn(grid, 2, |x, a| example1_value(&p, x, a).unwrap().finite().unwrap()).unwrap();
        let rep = qvi_check(&phi, &p.model(), &p.generator(), &YieldFunction::unit(2), p.r, QviTolerance::default())
            .unwrap();
        assert!(rep.max_violation < 1e-3 && rep.complementarity_gap < 1e-3, "{:?}", rep.summary());
        assert!(rep.regime(0).all(|pt| pt.region == Region::Harvest));
        assert!(rep.regime(1).all(|pt| pt.region == Region::Continuation));
    }

    #[test]
    fn zero_function_violates_everywhere() {
        let p = case2();
        let phi = GridFunction::from_fn(uniform_grid(0.1, 5.0, 50), 2, |_, _| 0.0).unwrap();
        let rep = qvi_check(&phi, &p.model(), &p.generator(), &YieldFunction::unit(2), p.r, QviTolerance::default())
            .unwrap();
        assert!(rep.points.iter().all(|pt| pt.region == Region::Violation && pt.gradient_residual == 1.0));
        assert_eq!(rep.max_violation, 1.0);
    }

    #[test]
    fn example2_partition_is_exact() {
        for h in [0.02, 0.01, 0.005] {
            let rep = ex2_report(h);
            for pt in &rep.points {
                let expected = if pt.x < 2.0 { Region::Continuation } else { Region::Harvest };
                assert_eq!(pt.region, expected, "h = {h}: {pt:?}");
            }
        }
    }

    #[test]
    fn example2_residuals_converge() {
        let hs = [0.02, 0.01, 0.005];
        let reps: Vec<QviReport> = hs.iter().map(|&h| ex2_report(h)).collect();
        let gaps: Vec<f64> = reps.iter().map(|r| r.complementarity_gap).collect();
        let orders = observed_orders(&hs, &gaps);
        assert!(orders.iter().all(|&o| o >= 1.7), "{gaps:?} {orders:?}");
        let viol: Vec<f64> = reps.iter().map(|r| r.max_violation).collect();
        assert!(viol.windows(2).all(|w| w[1] <= w[0]), "{viol:?}");
    }

    #[test]
    fn rejects_bad_tolerance() {
        let p = case2();
        let phi = GridFunction::from_fn(uniform_grid(0.1, 5.0, 50), 2, |x, _| x).unwrap();
        let bad = QviTolerance::Fixed { tol: 0.0 };
        assert!(qvi_check(&phi, &p.model(), &p.generator(), &YieldFunction::unit(2), p.r, bad).is_err());
    }

    #[test]
    fn g_condition_examples() {
        let grid = uniform_grid(0.1, 10.0, 200);
        let q = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        let f = YieldFunction::unit(2);
        let sub = ModelSpec::gbm(&[0.05, 0.08], &[0.3, 0.2]).unwrap();
        assert!(g_condition_check(&sub, &q, &f, 0.1, &grid, 1e-9).unwrap().holds);
        let sup = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let rep = g_condition_check(&sup, &q, &f, 0.1, &grid, 1e-9).unwrap();
        assert!(!rep.holds);
        assert_eq!(rep.violations, vec![0, grid.len()]);
        assert_eq!(rep.worst_regime, 1);
        let flat = ModelSpec::gbm(&[0.0, 0.0], &[0.5, 1.5]).unwrap();
        let pd = YieldFunction::PowerDecay { gamma: 0.75 };
        let rep = g_condition_check(&flat, &q, &pd, 0.05, &grid, 1e-9).unwrap();
        assert!(rep.holds, "{} at {}", rep.worst_value, rep.worst_x);
        // oracle: ½σ²x²g'' - rg
        for (i, &x) in grid.iter().enumerate() {
            let g = ((1.0 + x).powf(0.25) - 1.0) / 0.25;
            let exact = 0.5 * 0.25 * x * x * (-0.75) * (1.0 + x).powf(-1.75) - 0.05 * g;
            assert!((rep.values.values[0][i] - exact).abs() < 1e-4 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn g_condition_matches_qvi_pde_residual() {
        let p = case2();
        let grid = uniform_grid(0.1, 10.0, 100);
        let f = YieldFunction::unit(2);
        let g = GridFunction::from_fn(grid.clone(), 2, |x, a| g_integral(&f, x, a).unwrap()).unwrap();
        let rep = qvi_check(&g, &p.model(), &p.generator(), &f, p.r, QviTolerance::default()).unwrap();
        let gc = g_condition_check(&p.model(), &p.generator(), &f, p.r, &grid, 0.0).unwrap();
        for pt in &rep.points {
            let i = grid.iter().position(|&x| x == pt.x).unwrap();
            assert_eq!(pt.pde_residual.to_bits(), gc.values.values[pt.regime][i].to_bits());
        }
    }

    #[test]
    fn lyapunov_examples() {
        let grid = uniform_grid(0.01, 5.0, 100);
        let q = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let w = GridFunction::from_fn(grid.clone(), 2, |x, _| x).unwrap();
        let down = ModelSpec::abm(&[-0.5, 0.0], &[1.0, 0.3]).unwrap();
        assert!(lyapunov_check(&w, &down, &q, 1e-9).unwrap().holds);
        let up = ModelSpec::abm(&[-0.5, 0.2], &[1.0, 0.3]).unwrap();
        let rep = lyapunov_check(&w, &up, &q, 1e-9).unwrap();
        assert!(!rep.holds);
        assert!(rep.violations.iter().all(|v| v.regime == 1 && v.kind == LyapunovFailure::Generator));
        let gbm = ModelSpec::gbm(&[-0.1, 0.0], &[0.3, 0.2]).unwrap();
        assert!(lyapunov_check(&w, &gbm, &q, 1e-9).unwrap().holds);
        let one = GridFunction::from_fn(grid, 2, |_, _| 1.0).unwrap();
        let rep = lyapunov_check(&one, &down, &q, 1e-9).unwrap();
        assert!(!rep.holds);
        assert!(rep.violations.iter().all(|v| v.kind == LyapunovFailure::NotVanishing));
        assert!(!rep.reasons.is_empty());
    }

    #[test]
    fn dpp_gap_at_zero_horizon_is_exact() {
        let p = case2();
        let v = |x: f64, a: usize| example1_value(&p, x, a).unwrap().finite().unwrap();
        let family = [StrategySpec::InstantDepletion, StrategySpec::NoHarvest];
        let rep = dpp_gap(&p.model(), &p.generator(), &family, &YieldFunction::unit(2), p.r, 1.5, 0, 0.0, 1e-3, &v, &McConfig::new(64, 3))
            .unwrap();
        assert_eq!(rep.gap, 0.0);
        assert_eq!(rep.stderr, 0.0);
    }

    #[test]
    fn dpp_gap_case2_optimal_family() {
        let p = case2();
        let v = |x: f64, a: usize| example1_value(&p, x, a).unwrap().finite().unwrap();
        let family = [StrategySpec::RegimeTriggeredDepletion { trigger: vec![0] }, StrategySpec::NoHarvest];
        let rep = dpp_gap(&p.model(), &p.generator(), &family, &YieldFunction::unit(2), p.r, 1.0, 1, 1.0, 1e-3, &v, &McConfig::new(4000, 11))
            .unwrap();
        assert!(rep.gap.abs() <= 3.0 * rep.stderr, "{rep:?}");
    }

    #[test]
    fn dpp_gap_detects_suboptimal_family() {
        let p = Example1Params::new([0.05, 0.08], [0.3, 0.2], [1.0, 1.0], 0.1).unwrap();
        let v = |x: f64, _: usize| x;
        let rep = dpp_gap(&p.model(), &p.generator(), &[StrategySpec::NoHarvest], &YieldFunction::unit(2), p.r, 1.0, 0, 1.0, 1e-3, &v, &McConfig::new(4000, 5))
            .unwrap();
        assert!(rep.gap < -3.0 * rep.stderr, "{rep:?}");
    }
}
