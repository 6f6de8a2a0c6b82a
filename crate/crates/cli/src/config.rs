//! Scenario files: one TOML document per scenario.
//!
//! ```toml
//! id = "example1-case2"
//! r = 0.1
//! x0 = [1.0]
//! alpha0 = [1]                      # 0-based regime indices
//! q = [[-1.0, 1.0], [1.0, -1.0]]
//! reference = "example1"            # example1 | example2 | none
//! checks = ["qvi", "dpp"]           # qvi | g_condition | lyapunov | dpp
//!
//! [model]                           # kind = gbm | abm | tabulated
//! kind = "gbm"
//! mu = [0.05, 0.12]
//! sigma = [0.3, 0.2]
//!
//! [yield]                           # kind = constant_per_regime | power_decay
//! kind = "constant_per_regime"
//! prices = [1.0, 1.0]
//!
//! [strategy]                        # see StrategySpec
//! kind = "regime_triggered_depletion"
//! trigger = [0]
//!
//! [sim]
//! dt = 1e-3
//! horizon = 40.0
//!
//! [mc]
//! n_paths = 100000
//! base_seed = 7
//!
//! [qvi]                             # optional
//! x_min = 0.1
//! x_max = 20.0
//! n = 2000
//!
//! [dpp]                             # required by the dpp check
//! eta = 1.0
//! family = [{ kind = "regime_triggered_depletion", trigger = [0] }, { kind = "no_harvest" }]
//! ```

use std::path::Path;

use harvest_core::ctmc::GeneratorMatrix;
use harvest_core::model::{ModelSpec, YieldFunction};
use harvest_core::payoff::McConfig;
use harvest_core::qvi::QviTolerance;
use harvest_core::simulate::SimConfig;
use harvest_core::strategies::StrategySpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Syntax or schema error; `path` is the dotted key path of the offending entry.
    #[error("{source_name}: at `{path}`: {message}")]
    Parse { source_name: String, path: String, message: String },
    #[error("{0}")]
    DimensionMismatch(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Qvi,
    GCondition,
    Lyapunov,
    Dpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Example1,
    Example2,
    #[default]
    None,
}

fn default_qvi_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QviSettings {
    /// Defaults to `1e-2 · max(x0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    /// Defaults to `10 · max(x0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default = "default_qvi_n")]
    pub n: usize,
    /// A level that must be a grid node (the barrier of the power-decay reference by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
    #[serde(default)]
    pub tolerance: QviTolerance,
    /// Tolerance of the `(𝓛 - r)g ≤ 0` and `𝓛W ≤ 0` checks.
    #[serde(default = "default_sign_tol")]
    pub sign_tol: f64,
    /// Lyapunov candidate `W(x, α) = x^k`.
    #[serde(default = "default_lyapunov_power")]
    pub lyapunov_power: f64,
}

fn default_sign_tol() -> f64 {
    1e-9
}

fn default_lyapunov_power() -> f64 {
    1.0
}

impl Default for QviSettings {
    fn default() -> Self {
        Self {
            x_min: None,
            x_max: None,
            n: default_qvi_n(),
            anchor: None,
            tolerance: QviTolerance::default(),
            sign_tol: default_sign_tol(),
            lyapunov_power: default_lyapunov_power(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppSettings {
    pub eta: f64,
    pub family: Vec<StrategySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub r: f64,
    pub x0: Vec<f64>,
    pub alpha0: Vec<usize>,
    pub q: GeneratorMatrix,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub checks: Vec<Check>,
    pub model: ModelSpec,
    #[serde(rename = "yield")]
    pub yield_fn: YieldFunction,
    pub strategy: StrategySpec,
    pub sim: SimConfig,
    pub mc: McConfig,
    #[serde(default)]
    pub qvi: QviSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpp: Option<DppSettings>,
}

/// Parses and validates a scenario; `source_name` labels error messages.
pub fn parse_scenario(text: &str, source_name: &str) -> Result<Scenario, ConfigError> {
    let parse_err = |path: String, message: String| ConfigError::Parse {
        source_name: source_name.to_string(),
        path,
        message,
    };
    let de = toml::Deserializer::parse(text).map_err(|e| parse_err(".".into(), e.to_string()))?;
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(path, e.into_inner().to_string().trim_end().to_string())
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io { path: path.display().to_string(), err })?;
    parse_scenario(&text, &path.display().to_string())
}

impl Scenario {
    /// Cross-reference checks: regime counts, initial states and settings.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = self.q.m();
        let dim = |what: &str, got: usize| {
            ConfigError::DimensionMismatch(format!("{what} has {got} regimes but q has {m}"))
        };
        if self.model.m() != m {
            return Err(dim("model", self.model.m()));
        }
        if let YieldFunction::ConstantPerRegime { prices } = &self.yield_fn {
            if prices.len() != m {
                return Err(dim("yield", prices.len()));
            }
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.yield_fn.validate(m).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.strategy.validate(m, self.sim.horizon).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(ConfigError::Invalid(format!("r = {} must be positive", self.r)));
        }
        if self.x0.is_empty() || self.alpha0.is_empty() {
            return Err(ConfigError::Invalid("x0 and alpha0 must be non-empty".into()));
        }
        if let Some(x) = self.x0.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(ConfigError::Invalid(format!("x0 = {x} must be positive")));
        }
        if let Some(a) = self.alpha0.iter().find(|&&a| a >= m) {
            return Err(ConfigError::DimensionMismatch(format!("alpha0 = {a} out of range for {m} regimes")));
        }
        if self.qvi.n < 5 {
            return Err(ConfigError::Invalid(format!("qvi.n = {} must be >= 5", self.qvi.n)));
        }
        if self.checks.contains(&Check::Dpp) {
            let dpp = self.dpp.as_ref().ok_or_else(|| ConfigError::Invalid("the dpp check needs a [dpp] table".into()))?;
            if dpp.family.is_empty() {
                return Err(ConfigError::Invalid("dpp.family must be non-empty".into()));
            }
            for s in &dpp.family {
                s.validate(m, dpp.eta.max(self.sim.dt)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// `(x0, α0)` pairs in row order: `x0` outer, `α0` inner.
    pub fn starts(&self) -> Vec<(f64, usize)> {
        self.x0.iter().flat_map(|&x| self.alpha0.iter().map(move |&a| (x, a))).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn x_scale(&self) -> f64 {
        self.x0.iter().copied().fold(0.0, f64::max)
    }
}
