//! Per-regime coefficients of the population dynamics, the harvest price
//! (yield) function, and the generator of the paired process applied to
//! functions sampled on a grid.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctmc::GeneratorMatrix;
use crate::fd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("regime {regime} out of range for a model with {m} regimes")]
    RegimeOutOfRange { regime: usize, m: usize },
    #[error("negative population {0}")]
    NegativePopulation(f64),
    #[error("grid function needs at least 5 points, got {0}")]
    GridTooSmall(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid yield function: {0}")]
    InvalidYield(String),
    #[error("regime count mismatch: {what} has {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: usize, expected: usize },
}

/// A coefficient given as a pure function of `(x, regime)`.
pub type CoefficientFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Coefficients supplied as data rather than as a parametric family.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Tabulated {
    /// Piecewise-linear interpolation between knots, constant beyond the ends.
    Knots { x: Vec<f64>, drift: Vec<Vec<f64>>, diffusion: Vec<Vec<f64>> },
    /// Arbitrary mappings; library use only.
    #[serde(skip)]
    Custom { m: usize, drift: CoefficientFn, diffusion: CoefficientFn },
}

impl fmt::Debug for Tabulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tabulated::Knots { x, drift, diffusion } => f
                .debug_struct("Knots")
                .field("x", x)
                .field("drift", drift)
                .field("diffusion", diffusion)
                .finish(),
            Tabulated::Custom { m, .. } => f.debug_struct("Custom").field("m", m).finish_non_exhaustive(),
        }
    }
}

impl PartialEq for Tabulated {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                Tabulated::Knots { x: a, drift: b, diffusion: c },
                Tabulated::Knots { x: d, drift: e, diffusion: g },
            ) => a == d && b == e && c == g,
            (Tabulated::Custom { drift: a, diffusion: b, .. }, Tabulated::Custom { drift: c, diffusion: d, .. }) => {
                Arc::ptr_eq(a, c) && Arc::ptr_eq(b, d)
            }
            _ => false,
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&v| v <= x);
    if k == 0 {
        ys[0]
    } else if k == xs.len() {
        ys[xs.len() - 1]
    } else {
        let (x0, x1) = (xs[k - 1], xs[k]);
        let w = (x - x0) / (x1 - x0);
        ys[k - 1] + w * (ys[k] - ys[k - 1])
    }
}

impl Tabulated {
    fn m(&self) -> usize {
        match self {
            Tabulated::Knots { drift, .. } => drift.len(),
            Tabulated::Custom { m, .. } => *m,
        }
    }

    fn drift(&self, x: f64, a: usize) -> f64 {
        match self {
            Tabulated::Knots { x: xs, drift, .. } => interpolate(xs, &drift[a], x),
            Tabulated::Custom { drift, .. } => drift(x, a),
        }
    }

    fn diffusion(&self, x: f64, a: usize) -> f64 {
        match self {
            Tabulated::Knots { x: xs, diffusion, .. } => interpolate(xs, &diffusion[a], x),
            Tabulated::Custom { diffusion, .. } => diffusion(x, a),
        }
    }
}

/// Coefficient family of the uncontrolled dynamics `dX = b(X,α)dt + σ(X,α)dw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `b = μ_α x`, `σ = σ_α x`.
    Gbm { mu: Vec<f64>, sigma: Vec<f64> },
    /// `b = b_α`, `σ = σ_α > 0`.
    Abm { drift: Vec<f64>, sigma: Vec<f64> },
    Tabulated(Tabulated),
}

impl ModelSpec {
    pub fn gbm(mu: &[f64], sigma: &[f64]) -> Result<Self, ModelError> {
        let m = ModelSpec::Gbm { mu: mu.to_vec(), sigma: sigma.to_vec() };
        m.validate()?;
        Ok(m)
    }

    pub fn abm(drift: &[f64], sigma: &[f64]) -> Result<Self, ModelError> {
        let m = ModelSpec::Abm { drift: drift.to_vec(), sigma: sigma.to_vec() };
        m.validate()?;
        Ok(m)
    }

    pub fn custom(m: usize, drift: CoefficientFn, diffusion: CoefficientFn) -> Self {
        ModelSpec::Tabulated(Tabulated::Custom { m, drift, diffusion })
    }

    pub fn m(&self) -> usize {
        match self {
            ModelSpec::Gbm { mu, .. } => mu.len(),
            ModelSpec::Abm { drift, .. } => drift.len(),
            ModelSpec::Tabulated(t) => t.m(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |s: String| Err(ModelError::InvalidModel(s));
        match self {
            ModelSpec::Gbm { mu, sigma } | ModelSpec::Abm { drift: mu, sigma } => {
                if mu.is_empty() {
                    return bad("at least one regime is required".into());
                }
                if mu.len() != sigma.len() {
                    return bad(format!("{} drift values but {} volatilities", mu.len(), sigma.len()));
                }
                if mu.iter().chain(sigma).any(|v| !v.is_finite()) {
                    return bad("coefficients must be finite".into());
                }
                let abm = matches!(self, ModelSpec::Abm { .. });
                if let Some(s) = sigma.iter().find(|&&s| if abm { s <= 0.0 } else { s < 0.0 }) {
                    return bad(format!("volatility {s} not allowed"));
                }
            }
            ModelSpec::Tabulated(Tabulated::Knots { x, drift, diffusion }) => {
                if x.len() < 2 || !x.windows(2).all(|w| w[0] < w[1]) {
                    return bad("tabulated knots must be strictly increasing with at least 2 entries".into());
                }
                if drift.is_empty() || drift.len() != diffusion.len() {
                    return bad("drift and diffusion tables need the same positive regime count".into());
                }
                if drift.iter().chain(diffusion).any(|row| row.len() != x.len()) {
                    return bad("every table row must match the knot count".into());
                }
                if diffusion.iter().flatten().any(|&s| s < 0.0 || !s.is_finite()) {
                    return bad("tabulated diffusion must be finite and nonnegative".into());
                }
            }
            ModelSpec::Tabulated(Tabulated::Custom { m, .. }) => {
                if *m == 0 {
                    return bad("at least one regime is required".into());
                }
            }
        }
        Ok(())
    }

    /// Linear-growth constant `κ₀ = max_α (|b_α| + |σ_α|)` of the parametric families.
    pub fn linear_growth_constant(&self) -> Option<f64> {
        match self {
            ModelSpec::Gbm { mu: a, sigma } | ModelSpec::Abm { drift: a, sigma } => {
                Some(a.iter().zip(sigma).map(|(a, s)| a.abs() + s.abs()).fold(0.0, f64::max))
            }
            ModelSpec::Tabulated(_) => None,
        }
    }

    fn check(&self, a: usize) -> Result<(), ModelError> {
        if a < self.m() {
            Ok(())
        } else {
            Err(ModelError::RegimeOutOfRange { regime: a, m: self.m() })
        }
    }

    #[inline]
    pub(crate) fn drift_unchecked(&self, x: f64, a: usize) -> f64 {
        match self {
            ModelSpec::Gbm { mu, .. } => mu[a] * x,
            ModelSpec::Abm { drift, .. } => drift[a],
            ModelSpec::Tabulated(t) => t.drift(x, a),
        }
    }

    #[inline]
    pub(crate) fn diffusion_unchecked(&self, x: f64, a: usize) -> f64 {
        match self {
            ModelSpec::Gbm { sigma, .. } => sigma[a] * x,
            ModelSpec::Abm { sigma, .. } => sigma[a],
            ModelSpec::Tabulated(t) => t.diffusion(x, a),
        }
    }
}

pub fn drift(model: &ModelSpec, x: f64, regime: usize) -> Result<f64, ModelError> {
    model.check(regime)?;
    Ok(model.drift_unchecked(x, regime))
}

pub fn diffusion(model: &ModelSpec, x: f64, regime: usize) -> Result<f64, ModelError> {
    model.check(regime)?;
    Ok(model.diffusion_unchecked(x, regime))
}

/// Marginal harvest price `f(x, α)`; continuous and nonincreasing in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YieldFunction {
    ConstantPerRegime { prices: Vec<f64> },
    /// `f(x) = (1 + x)^(-γ)` in every regime.
    PowerDecay { gamma: f64 },
}

impl YieldFunction {
    pub fn unit(m: usize) -> Self {
        YieldFunction::ConstantPerRegime { prices: vec![1.0; m] }
    }

    pub fn validate(&self, m: usize) -> Result<(), ModelError> {
        match self {
            YieldFunction::ConstantPerRegime { prices } => {
                if prices.len() != m {
                    return Err(ModelError::DimensionMismatch { what: "yield prices", got: prices.len(), expected: m });
                }
                if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    return Err(ModelError::InvalidYield(format!("price {p} must be positive and finite")));
                }
            }
            YieldFunction::PowerDecay { gamma } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(ModelError::InvalidYield(format!("gamma {gamma} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64, a: usize) -> f64 {
        match self {
            YieldFunction::ConstantPerRegime { prices } => prices[a],
            YieldFunction::PowerDecay { gamma } => (1.0 + x).powf(-gamma),
        }
    }

    /// Upper bound of `f` over all states.
    pub fn max_price(&self) -> f64 {
        match self {
            YieldFunction::ConstantPerRegime { prices } => prices.iter().copied().fold(0.0, f64::max),
            YieldFunction::PowerDecay { .. } => 1.0,
        }
    }

    /// True when `f(x, α)` does not depend on `x`.
    pub fn is_state_independent(&self) -> bool {
        matches!(self, YieldFunction::ConstantPerRegime { .. })
    }
}

pub fn yield_eval(f: &YieldFunction, x: f64, regime: usize) -> Result<f64, ModelError> {
    if x < 0.0 {
        return Err(ModelError::NegativePopulation(x));
    }
    if let YieldFunction::ConstantPerRegime { prices } = f {
        if regime >= prices.len() {
            return Err(ModelError::RegimeOutOfRange { regime, m: prices.len() });
        }
    }
    Ok(f.eval_unchecked(x, regime))
}

/// A function of `(x, α)` sampled on a grid in `(0, ∞)`; one row per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if grid.len() < 5 {
            return Err(ModelError::GridTooSmall(grid.len()));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(ModelError::InvalidGrid("abscissae must be strictly increasing".into()));
        }
        if grid[0] <= 0.0 || grid.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidGrid("abscissae must be finite and positive".into()));
        }
        if values.is_empty() {
            return Err(ModelError::InvalidGrid("at least one regime row is required".into()));
        }
        if let Some(row) = values.iter().find(|r| r.len() != grid.len()) {
            return Err(ModelError::InvalidGrid(format!("row length {} differs from grid length {}", row.len(), grid.len())));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidGrid("values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples `h(x, α)` for `α = 0..m`.
    pub fn from_fn(grid: Vec<f64>, m: usize, h: impl Fn(f64, usize) -> f64) -> Result<Self, ModelError> {
        let values = (0..m).map(|a| grid.iter().map(|&x| h(x, a)).collect()).collect();
        Self::new(grid, values)
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn first_derivative(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| fd::first_derivative(&self.grid, v)).collect()
    }

    pub fn second_derivative(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| fd::second_derivative(&self.grid, v)).collect()
    }
}

/// `n` equally spaced points on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
}

/// Applies `(𝓛 - r)` to a grid function:
/// `b h' + ½σ² h'' + Σ_j q_αj (h(·,j) - h(·,α)) - r h`.
pub fn generator_apply(
    h: &GridFunction,
    model: &ModelSpec,
    q: &GeneratorMatrix,
    r: f64,
) -> Result<GridFunction, ModelError> {
    let m = h.m();
    if h.len() < 5 {
        return Err(ModelError::GridTooSmall(h.len()));
    }
    if model.m() != m {
        return Err(ModelError::DimensionMismatch { what: "model", got: model.m(), expected: m });
    }
    if q.m() != m {
        return Err(ModelError::DimensionMismatch { what: "generator", got: q.m(), expected: m });
    }
    let d1 = h.first_derivative();
    let d2 = h.second_derivative();
    let values = (0..m)
        .map(|a| {
            h.grid
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let s = model.diffusion_unchecked(x, a);
                    let coupling: f64 =
                        (0..m).filter(|&j| j != a).map(|j| q.rate(a, j) * (h.values[j][i] - h.values[a][i])).sum();
                    model.drift_unchecked(x, a) * d1[a][i] + 0.5 * s * s * d2[a][i] + coupling - r * h.values[a][i]
                })
                .collect()
        })
        .collect();
    Ok(GridFunction { grid: h.grid.clone(), values })
}

/// Empirical Lipschitz and linear-growth constants on a sample box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    /// max over pairs of `(|Δb| + |Δσ|) / |Δx|`.
    pub max_difference_ratio: f64,
    /// max over samples of `(|b| + |σ|) / (1 + |x|)`.
    pub max_growth_ratio: f64,
    pub drift_difference_ratio: f64,
    pub diffusion_difference_ratio: f64,
}

/// Advisory probe of the Lipschitz and linear-growth conditions; never rejects.
pub fn lipschitz_probe(model: &ModelSpec, lo: f64, hi: f64, samples: usize) -> LipschitzReport {
    let xs = uniform_grid(lo, hi, samples.max(2));
    let mut rep = LipschitzReport {
        max_difference_ratio: 0.0,
        max_growth_ratio: 0.0,
        drift_difference_ratio: 0.0,
        diffusion_difference_ratio: 0.0,
    };
    for a in 0..model.m() {
        let b: Vec<f64> = xs.iter().map(|&x| model.drift_unchecked(x, a)).collect();
        let s: Vec<f64> = xs.iter().map(|&x| model.diffusion_unchecked(x, a)).collect();
        for i in 0..xs.len() {
            rep.max_growth_ratio = rep.max_growth_ratio.max((b[i].abs() + s[i].abs()) / (1.0 + xs[i].abs()));
            for j in i + 1..xs.len() {
                let dx = (xs[j] - xs[i]).abs();
                let db = (b[j] - b[i]).abs() / dx;
                let ds = (s[j] - s[i]).abs() / dx;
                rep.drift_difference_ratio = rep.drift_difference_ratio.max(db);
                rep.diffusion_difference_ratio = rep.diffusion_difference_ratio.max(ds);
                rep.max_difference_ratio = rep.max_difference_ratio.max(db + ds);
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q2() -> GeneratorMatrix {
        GeneratorMatrix::two_state(1.0, 1.0).unwrap()
    }

    #[test]
    fn drift_examples() {
        let g = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        assert!((drift(&g, 2.0, 0).unwrap() - 0.10).abs() < 1e-15);
        assert_eq!(drift(&g, 0.0, 1).unwrap(), 0.0);
        let a = ModelSpec::abm(&[-1.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!(drift(&a, 17.0, 1).unwrap(), 3.0);
        assert!(matches!(drift(&a, 1.0, 2), Err(ModelError::RegimeOutOfRange { regime: 2, m: 2 })));
    }

    #[test]
    fn diffusion_examples() {
        let g = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        assert!((diffusion(&g, 10.0, 1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(diffusion(&g, 0.0, 0).unwrap(), 0.0);
        let a = ModelSpec::abm(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(diffusion(&a, -5.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn model_validation() {
        assert!(ModelSpec::abm(&[1.0], &[0.0]).is_err());
        assert!(ModelSpec::gbm(&[1.0], &[0.0]).is_ok());
        assert!(ModelSpec::gbm(&[1.0, 2.0], &[0.1]).is_err());
        assert!(ModelSpec::gbm(&[1.0], &[-0.1]).is_err());
        let g = ModelSpec::gbm(&[0.05, -0.12], &[0.3, 0.2]).unwrap();
        assert!((g.linear_growth_constant().unwrap() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn yield_examples() {
        let unit = YieldFunction::unit(2);
        assert_eq!(yield_eval(&unit, 123.0, 1).unwrap(), 1.0);
        let p = YieldFunction::PowerDecay { gamma: 0.75 };
        assert_eq!(yield_eval(&p, 0.0, 0).unwrap(), 1.0);
        let h = YieldFunction::PowerDecay { gamma: 0.5 };
        assert!((yield_eval(&h, 3.0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(yield_eval(&h, -1.0, 0), Err(ModelError::NegativePopulation(_))));
        assert!(YieldFunction::PowerDecay { gamma: 1.0 }.validate(1).is_err());
        assert!(YieldFunction::ConstantPerRegime { prices: vec![1.0, 0.0] }.validate(2).is_err());
    }

    #[test]
    fn yields_are_nonincreasing() {
        for f in [YieldFunction::PowerDecay { gamma: 0.3 }, YieldFunction::ConstantPerRegime { prices: vec![2.0, 0.5] }] {
            for a in 0..2 {
                let xs = uniform_grid(0.0, 50.0, 200);
                for w in xs.windows(2) {
                    assert!(f.eval_unchecked(w[0], a) >= f.eval_unchecked(w[1], a));
                }
                let f0 = f.eval_unchecked(0.0, a);
                assert!(f0 > 0.0 && f0.is_finite());
            }
        }
    }

    #[test]
    fn tabulated_knots_interpolate() {
        let t = ModelSpec::Tabulated(Tabulated::Knots {
            x: vec![0.0, 1.0, 3.0],
            drift: vec![vec![0.0, 1.0, 2.0]],
            diffusion: vec![vec![1.0, 1.0, 0.0]],
        });
        t.validate().unwrap();
        assert_eq!(drift(&t, 0.5, 0).unwrap(), 0.5);
        assert_eq!(drift(&t, 2.0, 0).unwrap(), 1.5);
        assert_eq!(drift(&t, 10.0, 0).unwrap(), 2.0);
        assert_eq!(diffusion(&t, -1.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn generator_on_identity_function_example_one() {
        let (mu, r) = ([0.05, 0.12], 0.1);
        let model = ModelSpec::gbm(&mu, &[0.3, 0.2]).unwrap();
        let h = GridFunction::from_fn(uniform_grid(0.1, 20.0, 200), 2, |x, _| x).unwrap();
        let out = generator_apply(&h, &model, &q2(), r).unwrap();
        for a in 0..2 {
            for (i, &x) in h.grid.iter().enumerate() {
                // rounding in the second difference scales like ε·x³/h²
                assert!((out.values[a][i] - (mu[a] - r) * x).abs() < 1e-9 * (1.0 + x * x));
            }
        }
    }

    #[test]
    fn generator_of_zero_is_zero() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let h = GridFunction::from_fn(uniform_grid(0.1, 5.0, 50), 2, |_, _| 0.0).unwrap();
        let out = generator_apply(&h, &model, &q2(), 0.3).unwrap();
        assert!(out.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn power_function_is_harmonic_under_example_two() {
        // p₁ = p₂ = 0.5 for r = 0.25, μ = (1, 1.5), σ² = (2, 4).
        let model = ModelSpec::gbm(&[1.0, 1.5], &[2f64.sqrt(), 2.0]).unwrap();
        let errs: Vec<f64> = [200usize, 400, 800]
            .iter()
            .map(|&n| {
                let h = GridFunction::from_fn(uniform_grid(0.5, 5.0, n), 2, |x, _| x.sqrt()).unwrap();
                let out = generator_apply(&h, &model, &q2(), 0.25).unwrap();
                out.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect();
        assert!(errs[2] < 2e-4, "{errs:?}");
        assert!((errs[1] / errs[2]).log2() > 1.7, "{errs:?}");
    }

    #[test]
    fn generator_is_linear() {
        let model = ModelSpec::gbm(&[0.05, 0.12], &[0.3, 0.2]).unwrap();
        let grid = uniform_grid(0.1, 10.0, 100);
        let h1 = GridFunction::from_fn(grid.clone(), 2, |x, a| x.ln() + a as f64).unwrap();
        let h2 = GridFunction::from_fn(grid.clone(), 2, |x, a| (x * (1.0 + a as f64)).sin()).unwrap();
        let c = -2.5;
        let combo = GridFunction::from_fn(grid, 2, |x, a| c * (x.ln() + a as f64) + (x * (1.0 + a as f64)).sin()).unwrap();
        let (l1, l2, lc) = (
            generator_apply(&h1, &model, &q2(), 0.1).unwrap(),
            generator_apply(&h2, &model, &q2(), 0.1).unwrap(),
            generator_apply(&combo, &model, &q2(), 0.1).unwrap(),
        );
        for a in 0..2 {
            for i in 0..100 {
                let lhs = lc.values[a][i];
                let rhs = c * l1.values[a][i] + l2.values[a][i];
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn coupling_vanishes_for_regime_independent_functions() {
        let model = ModelSpec::gbm(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        let q = crate::ctmc::validate_generator(&[vec![-1.0, 0.5, 0.5], vec![2.0, -3.0, 1.0], vec![0.1, 0.1, -0.2]])
            .unwrap();
        let h = GridFunction::from_fn(uniform_grid(0.1, 3.0, 30), 3, |x, _| x * x + 1.0).unwrap();
        let out = generator_apply(&h, &model, &q, 0.0).unwrap();
        assert!(out.values.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grid_function_rejects_small_grids() {
        assert!(matches!(GridFunction::new(vec![1.0, 2.0, 3.0, 4.0], vec![vec![0.0; 4]]), Err(ModelError::GridTooSmall(4))));
        assert!(GridFunction::new(vec![1.0, 2.0, 2.0, 4.0, 5.0], vec![vec![0.0; 5]]).is_err());
    }

    #[test]
    fn lipschitz_probe_examples() {
        let g = ModelSpec::gbm(&[1.0], &[1.0]).unwrap();
        let rep = lipschitz_probe(&g, 0.0, 10.0, 50);
        assert!(rep.max_difference_ratio <= 2.0 + 1e-12);
        assert!(rep.max_growth_ratio <= 2.0);

        let a = ModelSpec::abm(&[0.3, -0.2], &[1.0, 2.0]).unwrap();
        assert_eq!(lipschitz_probe(&a, 0.0, 10.0, 20).drift_difference_ratio, 0.0);

        let sqrt = ModelSpec::custom(1, Arc::new(|x, _| x.max(0.0).sqrt()), Arc::new(|_, _| 0.0));
        let coarse = lipschitz_probe(&sqrt, 0.0, 1.0, 11).max_difference_ratio;
        let fine = lipschitz_probe(&sqrt, 0.0, 1.0, 101).max_difference_ratio;
        // |√h - 0| / h = h^{-1/2}
        assert!((coarse - 10f64.sqrt()).abs() < 1e-9);
        assert!((fine - 10.0).abs() < 1e-9);
    }
}
