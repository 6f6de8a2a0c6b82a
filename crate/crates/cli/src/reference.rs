//! Closed-form values attached to a scenario.

use harvest_core::analytic::{
    characteristic_roots, classify_example1, example1_value, example2_value, positive_root_p, xi_threshold,
    AnalyticError, Example1Params, Example2Params, Value,
};
use harvest_core::model::{ModelSpec, YieldFunction};
use serde_json::{json, Value as Json};

use crate::config::{Reference, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    Example1(Example1Params),
    Example2(Example2Params),
}

fn two_regime_gbm(s: &Scenario) -> Result<([f64; 2], [f64; 2], [f64; 2]), AnalyticError> {
    let ModelSpec::Gbm { mu, sigma } = &s.model else {
        return Err(AnalyticError::InvalidParams("closed forms need a geometric model".into()));
    };
    if s.q.m() != 2 {
        return Err(AnalyticError::InvalidParams("closed forms need two regimes".into()));
    }
    Ok(([mu[0], mu[1]], [sigma[0], sigma[1]], [s.q.rate(0, 1), s.q.rate(1, 0)]))
}

impl ClosedForm {
    pub fn from_scenario(s: &Scenario) -> Result<Option<Self>, AnalyticError> {
        match s.reference {
            Reference::None => Ok(None),
            Reference::Example1 => {
                if s.yield_fn != YieldFunction::unit(2) {
                    return Err(AnalyticError::InvalidParams("the example1 reference needs unit prices".into()));
                }
                let (mu, sigma, lambda) = two_regime_gbm(s)?;
                Ok(Some(ClosedForm::Example1(Example1Params::new(mu, sigma, lambda, s.r)?)))
            }
            Reference::Example2 => {
                let YieldFunction::PowerDecay { gamma } = s.yield_fn else {
                    return Err(AnalyticError::InvalidParams("the example2 reference needs a power-decay price".into()));
                };
                let (mu, sigma, lambda) = two_regime_gbm(s)?;
                let p = Example2Params { mu, sigma, lambda, r: s.r, gamma };
                p.common_root()?;
                Ok(Some(ClosedForm::Example2(p)))
            }
        }
    }

    /// `φ(x, α)`; `None` when the value is infinite.
    pub fn value(&self, x: f64, regime: usize) -> Result<Option<f64>, AnalyticError> {
        match self {
            ClosedForm::Example1(p) => Ok(match example1_value(p, x, regime)? {
                Value::Finite(v) => Some(v),
                Value::Infinite => None,
            }),
            ClosedForm::Example2(p) => example2_value(p, x).map(Some),
        }
    }

    /// Barrier of the power-decay model.
    pub fn barrier(&self) -> Option<f64> {
        match self {
            ClosedForm::Example2(p) => p.barrier().ok(),
            ClosedForm::Example1(_) => None,
        }
    }

    /// Characteristic data: quartic roots and case split, or the common root and barrier.
    pub fn roots_json(&self) -> Result<Json, AnalyticError> {
        match self {
            ClosedForm::Example1(p) => {
                let case = classify_example1(p)?;
                let xi = xi_threshold(p).ok();
                let roots = characteristic_roots(p)?;
                Ok(json!({
                    "reference": "example1",
                    "case": case,
                    "xi": xi,
                    "beta": roots.beta,
                    "residuals": roots.residuals,
                    "beta2_in_unit_interval": roots.beta[1] > 0.0 && roots.beta[1] < 1.0,
                }))
            }
            ClosedForm::Example2(p) => {
                let p1 = positive_root_p(p.mu[0], p.sigma[0] * p.sigma[0], p.r)?;
                let p2 = positive_root_p(p.mu[1], p.sigma[1] * p.sigma[1], p.r)?;
                Ok(json!({
                    "reference": "example2",
                    "p": [p1, p2],
                    "barrier": p.barrier()?,
                }))
            }
        }
    }
}
