//! Closed-form quantities of the two-regime geometric models: the antiderivative
//! `g` of the price, the switching threshold `ξ`, the value function and case
//! split of the constant-price model, the characteristic quartic, and the
//! barrier solution of the power-decay price model.
//!
//! Regimes are 0-based throughout: index 0 has the smaller drift.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctmc::GeneratorMatrix;
use crate::model::{ModelSpec, YieldFunction};

/// Tolerance of the common-root condition `p₁ = p₂`.
pub const COMMON_ROOT_TOLERANCE: f64 = 1e-10;
/// Imaginary parts below this (relative) size are treated as rounding.
const IMAG_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("denominator r + λ₁ - μ₁ vanishes")]
    DegenerateDenominator,
    #[error("parameters sit on a boundary between cases: {0}")]
    UnclassifiedBoundary(String),
    #[error("characteristic quartic has complex roots {0:?}")]
    ComplexRoots(Vec<(f64, f64)>),
    #[error("characteristic roots {0:?} violate β₁ > β₂ > 0 > β₃ > β₄{1}")]
    OrderingViolation([f64; 4], &'static str),
    #[error("γ = {gamma} outside ({lo}, 1)")]
    InvalidGamma { gamma: f64, lo: f64 },
    #[error("positive roots differ: p₁ = {p1}, p₂ = {p2}")]
    UnequalRoots { p1: f64, p2: f64 },
    #[error("regime {0} out of range for a two-regime model")]
    RegimeOutOfRange(usize),
}

/// Two-regime geometric model with constant unit price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Params {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub lambda: [f64; 2],
    pub r: f64,
}

impl Example1Params {
    pub fn new(mu: [f64; 2], sigma: [f64; 2], lambda: [f64; 2], r: f64) -> Result<Self, AnalyticError> {
        let p = Self { mu, sigma, lambda, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        let all = [self.mu[0], self.mu[1], self.sigma[0], self.sigma[1], self.lambda[0], self.lambda[1], self.r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AnalyticError::InvalidParams("parameters must be finite".into()));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) || self.lambda.iter().any(|&l| l <= 0.0) || self.r <= 0.0 {
            return Err(AnalyticError::InvalidParams("σ, λ and r must be positive".into()));
        }
        if self.mu[0] > self.mu[1] {
            return Err(AnalyticError::InvalidParams(format!(
                "regimes must be ordered so that μ₁ ≤ μ₂, got {:?}",
                self.mu
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelSpec {
        ModelSpec::Gbm { mu: self.mu.to_vec(), sigma: self.sigma.to_vec() }
    }

    pub fn generator(&self) -> GeneratorMatrix {
        GeneratorMatrix::two_state(self.lambda[0], self.lambda[1]).expect("λ validated positive")
    }
}

/// `g(x, α) = ∫₀^x f(y, α) dy`.
pub fn g_integral(f: &YieldFunction, x: f64, regime: usize) -> Result<f64, AnalyticError> {
    if !(x >= 0.0) {
        return Err(AnalyticError::InvalidParams(format!("x = {x} must be >= 0")));
    }
    match f {
        YieldFunction::ConstantPerRegime { prices } => {
            prices.get(regime).map(|p| p * x).ok_or(AnalyticError::RegimeOutOfRange(regime))
        }
        YieldFunction::PowerDecay { gamma } => Ok(((1.0 + x).powf(1.0 - gamma) - 1.0) / (1.0 - gamma)),
    }
}

/// `ξ = (rλ₁ + (r - μ₁)(r + λ₂)) / (r + λ₁ - μ₁)`.
pub fn xi_threshold(p: &Example1Params) -> Result<f64, AnalyticError> {
    let [mu1, _] = p.mu;
    let [l1, l2] = p.lambda;
    let r = p.r;
    let den = r + l1 - mu1;
    if den == 0.0 {
        return Err(AnalyticError::DegenerateDenominator);
    }
    let xi = (r * l1 + (r - mu1) * (r + l2)) / den;
    debug_assert!(mu1 >= r || xi > r);
    Ok(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example1Case {
    /// `μ₁ ≤ r`, `μ₂ ≤ r`: deplete at once, `V = x`.
    BothSubcritical,
    /// `μ₁ < r < μ₂ ≤ ξ`: deplete on entering regime 0.
    Mixed,
    /// `μ₁ < r < ξ < μ₂`: infinite value.
    UnboundedMixed,
    /// `μ₁ ≥ r`, `μ₂ > r`: infinite value.
    BothSupercritical,
}

pub fn classify_example1(p: &Example1Params) -> Result<Example1Case, AnalyticError> {
    p.validate()?;
    let [mu1, mu2] = p.mu;
    let r = p.r;
    if mu1 <= r && mu2 <= r {
        return Ok(Example1Case::BothSubcritical);
    }
    if mu1 >= r && mu2 > r {
        return Ok(Example1Case::BothSupercritical);
    }
    if mu1 < r && r < mu2 {
        let xi = xi_threshold(p)?;
        return Ok(if mu2 <= xi { Example1Case::Mixed } else { Example1Case::UnboundedMixed });
    }
    Err(AnalyticError::UnclassifiedBoundary(format!("μ = {:?}, r = {r}", p.mu)))
}

/// A value that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    Finite(f64),
    Infinite,
}

impl Value {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Value::Finite(v) => Some(*v),
            Value::Infinite => None,
        }
    }
}

/// Value function of the constant-price model.
pub fn example1_value(p: &Example1Params, x: f64, regime: usize) -> Result<Value, AnalyticError> {
    if !(x > 0.0) {
        return Err(AnalyticError::InvalidParams(format!("x = {x} must be positive")));
    }
    if regime > 1 {
        return Err(AnalyticError::RegimeOutOfRange(regime));
    }
    Ok(match classify_example1(p)? {
        Example1Case::BothSubcritical => Value::Finite(x),
        Example1Case::Mixed => {
            if regime == 0 {
                Value::Finite(x)
            } else {
                let l2 = p.lambda[1];
                Value::Finite(l2 / (l2 + p.r - p.mu[1]) * x)
            }
        }
        Example1Case::UnboundedMixed | Example1Case::BothSupercritical => Value::Infinite,
    })
}

/// `g_i(x) = ½σ_i² x(x - 1) + μ_i x - r - λ_i`.
pub fn gi_eval(p: &Example1Params, i: usize, x: f64) -> Result<f64, AnalyticError> {
    if i > 1 {
        return Err(AnalyticError::RegimeOutOfRange(i));
    }
    let s2 = p.sigma[i] * p.sigma[i];
    Ok(0.5 * s2 * x * (x - 1.0) + p.mu[i] * x - p.r - p.lambda[i])
}

/// Coefficients of `h(x) = g₁(x) g₂(x) - λ₁λ₂`, highest degree first.
pub fn quartic_coefficients(p: &Example1Params) -> [f64; 5] {
    let quad = |i: usize| {
        let a = 0.5 * p.sigma[i] * p.sigma[i];
        (a, p.mu[i] - a, -p.r - p.lambda[i])
    };
    let (a1, b1, c1) = quad(0);
    let (a2, b2, c2) = quad(1);
    [
        a1 * a2,
        a1 * b2 + b1 * a2,
        a1 * c2 + b1 * b2 + c1 * a2,
        b1 * c2 + c1 * b2,
        c1 * c2 - p.lambda[0] * p.lambda[1],
    ]
}

fn horner(c: &[f64; 5], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &ci in c {
        d = d * x + v;
        v = v * x + ci;
    }
    (v, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuarticRoots {
    /// `β₁ > β₂ > β₃ > β₄`.
    pub beta: [f64; 4],
    /// `|h(β_j)|` after polishing.
    pub residuals: [f64; 4],
}

/// The four real roots of the characteristic quartic, from the eigenvalues of
/// its companion matrix polished by Newton's method.
pub fn characteristic_roots(p: &Example1Params) -> Result<QuarticRoots, AnalyticError> {
    p.validate()?;
    let c = quartic_coefficients(p);
    let lead = c[0];
    #[rustfmt::skip]
    let companion = Matrix4::new(
        -c[1] / lead, -c[2] / lead, -c[3] / lead, -c[4] / lead,
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let eig = companion.complex_eigenvalues();
    let pairs: Vec<(f64, f64)> = eig.iter().map(|z| (z.re, z.im)).collect();
    if pairs.iter().any(|&(re, im)| im.abs() > IMAG_TOLERANCE * (1.0 + re.abs())) {
        return Err(AnalyticError::ComplexRoots(pairs));
    }
    let mut beta = [0.0; 4];
    for (j, &(re, _)) in pairs.iter().enumerate() {
        let mut x = re;
        for _ in 0..50 {
            let (v, d) = horner(&c, x);
            if d == 0.0 {
                break;
            }
            let step = v / d;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        beta[j] = x;
    }
    beta.sort_by(|a, b| b.total_cmp(a));
    let residuals = beta.map(|b| horner(&c, b).0.abs());
    let ordered = beta[0] > beta[1] && beta[1] > 0.0 && 0.0 > beta[2] && beta[2] > beta[3];
    if !ordered {
        return Err(AnalyticError::OrderingViolation(beta, ""));
    }
    let [mu1, mu2] = p.mu;
    if mu1 < p.r && p.r < mu2 && xi_threshold(p)? < mu2 && !(beta[1] < 1.0) {
        return Err(AnalyticError::OrderingViolation(beta, " with β₂ < 1"));
    }
    Ok(QuarticRoots { beta, residuals })
}

/// Constants of `E_{x,i}[e^{-rη}]` for the first hitting time `η` of `(M, regime 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case3Constants {
    pub roots: QuarticRoots,
    pub l1: f64,
    pub l2: f64,
    pub c1: f64,
    pub c2: f64,
}

/// `l_j = -λ₂ / g₂(β_j)` and the coefficients `C₁`, `C₂` for export level `m_level`
/// and boundary value `c = E_{M,0}[e^{-rη}]`.
pub fn case3_constants(p: &Example1Params, m_level: f64, c: f64) -> Result<Case3Constants, AnalyticError> {
    if !(m_level > 0.0) {
        return Err(AnalyticError::InvalidParams(format!("export level {m_level} must be positive")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(AnalyticError::InvalidParams(format!("boundary value c = {c} outside [0, 1]")));
    }
    let roots = characteristic_roots(p)?;
    let [b1, b2, _, _] = roots.beta;
    let l1 = -p.lambda[1] / gi_eval(p, 1, b1)?;
    let l2 = -p.lambda[1] / gi_eval(p, 1, b2)?;
    let c1 = (l2 * c - 1.0) / ((l2 - l1) * m_level.powf(b1));
    let c2 = (1.0 - l1 * c) / ((l2 - l1) * m_level.powf(b2));
    Ok(Case3Constants { roots, l1, l2, c1, c2 })
}

/// `M·E_{x,i}[e^{-rη}]` for both starting regimes, a lower bound on the income of
/// exporting `M` on the first visit to `[M, ∞) × {regime 1}`. The expression
/// increases with `c`, so `c = 0` gives a bound free of the unknown boundary value.
pub fn case3_lower_bound(p: &Example1Params, x: f64, m_level: f64, c: f64) -> Result<(f64, f64), AnalyticError> {
    if !(x > 0.0 && x < m_level) {
        return Err(AnalyticError::InvalidParams(format!("need 0 < x < M, got x = {x}, M = {m_level}")));
    }
    let k = case3_constants(p, m_level, c)?;
    let [b1, b2, _, _] = k.roots.beta;
    let t1 = (k.l2 * c - 1.0) / (k.l2 - k.l1) * x.powf(b1) * m_level.powf(1.0 - b1);
    let t2 = (1.0 - k.l1 * c) / (k.l2 - k.l1) * x.powf(b2) * m_level.powf(1.0 - b2);
    Ok((t1 + t2, k.l1 * t1 + k.l2 * t2))
}

/// Positive root of `½σ²x(x - 1) + μx - r = 0`.
pub fn positive_root_p(mu: f64, sigma2: f64, r: f64) -> Result<f64, AnalyticError> {
    if !(sigma2 > 0.0 && r > 0.0 && mu.is_finite()) {
        return Err(AnalyticError::InvalidParams(format!("need σ² > 0 and r > 0, got σ² = {sigma2}, r = {r}")));
    }
    let k = 0.5 - mu / sigma2;
    let p = k + (k * k + 2.0 * r / sigma2).sqrt();
    if mu > r && !(p > 0.0 && p < 1.0) {
        return Err(AnalyticError::InvalidParams(format!("root p = {p} outside (0, 1) although μ > r")));
    }
    Ok(p)
}

/// Two-regime geometric model with price `(1 + x)^{-γ}` and a common root `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example2Params {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub lambda: [f64; 2],
    pub r: f64,
    pub gamma: f64,
}

impl Example2Params {
    /// Validates the parameters and returns the common root `p`.
    pub fn common_root(&self) -> Result<f64, AnalyticError> {
        let all = [self.mu[0], self.mu[1], self.sigma[0], self.sigma[1], self.lambda[0], self.lambda[1], self.r, self.gamma];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AnalyticError::InvalidParams("parameters must be finite".into()));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) || self.lambda.iter().any(|&l| l <= 0.0) || self.r <= 0.0 {
            return Err(AnalyticError::InvalidParams("σ, λ and r must be positive".into()));
        }
        if self.mu.iter().any(|&m| m <= self.r) {
            return Err(AnalyticError::InvalidParams(format!("need μ_i > r, got μ = {:?}, r = {}", self.mu, self.r)));
        }
        let p1 = positive_root_p(self.mu[0], self.sigma[0] * self.sigma[0], self.r)?;
        let p2 = positive_root_p(self.mu[1], self.sigma[1] * self.sigma[1], self.r)?;
        if (p1 - p2).abs() > COMMON_ROOT_TOLERANCE {
            return Err(AnalyticError::UnequalRoots { p1, p2 });
        }
        let p = 0.5 * (p1 + p2);
        if !(self.gamma > 1.0 - p && self.gamma < 1.0) {
            return Err(AnalyticError::InvalidGamma { gamma: self.gamma, lo: 1.0 - p });
        }
        Ok(p)
    }

    /// Barrier `b = (1 - p)/(p + γ - 1)`.
    pub fn barrier(&self) -> Result<f64, AnalyticError> {
        let p = self.common_root()?;
        Ok(barrier_level(p, self.gamma))
    }

    pub fn model(&self) -> ModelSpec {
        ModelSpec::Gbm { mu: self.mu.to_vec(), sigma: self.sigma.to_vec() }
    }

    pub fn generator(&self) -> GeneratorMatrix {
        GeneratorMatrix::two_state(self.lambda[0], self.lambda[1]).expect("λ validated positive")
    }

    pub fn yield_fn(&self) -> YieldFunction {
        YieldFunction::PowerDecay { gamma: self.gamma }
    }
}

pub fn barrier_level(p: f64, gamma: f64) -> f64 {
    (1.0 - p) / (p + gamma - 1.0)
}

/// Value function of the power-decay model (the same in both regimes).
pub fn example2_value(p2: &Example2Params, x: f64) -> Result<f64, AnalyticError> {
    if !(x > 0.0) {
        return Err(AnalyticError::InvalidParams(format!("x = {x} must be positive")));
    }
    let p = p2.common_root()?;
    let g = p2.gamma;
    let b = barrier_level(p, g);
    Ok(if x < b {
        (1.0 + b).powf(-g) / (p * b.powf(p - 1.0)) * x.powf(p)
    } else {
        ((1.0 + x).powf(1.0 - g) - (1.0 + b).powf(1.0 - g)) / (1.0 - g) + b * (1.0 + b).powf(-g) / p
    })
}

/// Derivative of [`example2_value`] in `x`.
pub fn example2_derivative(p2: &Example2Params, x: f64) -> Result<f64, AnalyticError> {
    let p = p2.common_root()?;
    let g = p2.gamma;
    let b = barrier_level(p, g);
    Ok(if x < b { (1.0 + b).powf(-g) * (x / b).powf(p - 1.0) } else { (1.0 + x).powf(-g) })
}

/// `E ∫ e^{-rs} dL_b(s) = x^p / (p b^{p-1})` for `0 < x ≤ b`.
pub fn local_time_mean(x: f64, p: f64, b: f64) -> Result<f64, AnalyticError> {
    if !(x > 0.0 && x <= b) {
        return Err(AnalyticError::InvalidParams(format!("need 0 < x <= b, got x = {x}, b = {b}")));
    }
    Ok(x.powf(p) / (p * b.powf(p - 1.0)))
}
