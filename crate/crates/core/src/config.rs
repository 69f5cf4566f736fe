//! JSON run configuration with strict schemas and cross-field validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, GridConfig};
use crate::error::{Error, Result};
use crate::market::{ExerciseSchedule, MarketModel, Payoff};
use crate::propagate::PropagatorConfig;
use crate::verify::{Problem, VerifyConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Relative volatility and market price of risk, both constant.
    Lognormal {
        vol: f64,
        lambda: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// Relative volatility and market price of risk tabulated in `x`.
    LocalTable {
        x: Vec<f64>,
        vol: Vec<f64>,
        lambda: Vec<f64>,
        #[serde(default = "one")]
        dim: usize,
    },
}

fn one() -> usize {
    1
}

/// Either explicit dates or `periods` equal periods up to `maturity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffConfig {
    Put { strike: f64 },
    PutSpread { low: f64, high: f64 },
    /// Rows per date index including `t_0`, values at the `x` nodes.
    CustomTable { x: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub payoff: PayoffConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub propagator: PropagatorConfig,
    /// Direct-route obstacle audit; by default on for at most four periods.
    #[serde(default)]
    pub audit: Option<bool>,
    #[serde(default = "default_eps_rel")]
    pub eps_rel: f64,
    #[serde(default)]
    pub verification: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_eps_rel() -> f64 {
    EngineConfig::default().eps_rel
}

fn field<T>(name: &str, err: Error) -> Result<T> {
    Err(match err {
        Error::Config { .. } => err,
        other => Error::Config {
            field: name.into(),
            message: other.to_string(),
        },
    })
}

impl RunConfig {
    /// Put with strike 30 at dates 1/3, 2/3, 1 with `vol = 0.25`,
    /// `lambda = 0.2`.
    pub fn put_example() -> Self {
        Self {
            model: ModelConfig::Lognormal {
                vol: 0.25,
                lambda: 0.2,
                dim: 1,
            },
            schedule: ScheduleConfig {
                dates: None,
                maturity: Some(1.0),
                periods: Some(3),
            },
            payoff: PayoffConfig::Put { strike: 30.0 },
            grid: GridConfig::default(),
            propagator: PropagatorConfig::default(),
            audit: None,
            eps_rel: default_eps_rel(),
            verification: VerifyConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn put_spread_example() -> Self {
        Self {
            payoff: PayoffConfig::PutSpread { low: 20.0, high: 30.0 },
            ..Self::put_example()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            grid: self.grid,
            propagator: self.propagator,
            audit: self.audit,
            eps_rel: self.eps_rel,
        }
    }

    /// Builds the problem, reporting the offending block on failure.
    pub fn problem(&self) -> Result<Problem> {
        let model = match &self.model {
            ModelConfig::Lognormal { vol, lambda, dim } => {
                if *dim != 1 {
                    return field("model.dim", Error::UnsupportedDimension { dim: *dim });
                }
                MarketModel::lognormal(*vol, *lambda)
            }
            ModelConfig::LocalTable { x, vol, lambda, dim } => {
                if *dim != 1 {
                    return field("model.dim", Error::UnsupportedDimension { dim: *dim });
                }
                MarketModel::local_table(x.clone(), vol.clone(), lambda.clone())
            }
        }
        .or_else(|e| field("model", e))?;
        let s = &self.schedule;
        let schedule = match (&s.dates, s.maturity, s.periods) {
            (Some(d), None, None) => ExerciseSchedule::new(d.clone()),
            (None, Some(m), Some(n)) => ExerciseSchedule::uniform(m, n),
            _ => {
                return field(
                    "schedule",
                    Error::InvalidInput("give either `dates` or both `maturity` and `periods`".into()),
                )
            }
        }
        .or_else(|e| field("schedule", e))?;
        let payoff = match &self.payoff {
            PayoffConfig::Put { strike } => Payoff::put(*strike),
            PayoffConfig::PutSpread { low, high } => Payoff::put_spread(*low, *high),
            PayoffConfig::CustomTable { x, values } => {
                if values.len() != schedule.periods() + 1 {
                    return field(
                        "payoff.values",
                        Error::InvalidInput(format!(
                            "{} rows for {} dates",
                            values.len(),
                            schedule.periods() + 1
                        )),
                    );
                }
                Payoff::custom_table(x.clone(), values.clone())
            }
        }
        .or_else(|e| field("payoff", e))?;
        let engine = self.engine();
        engine.grid.validate()?;
        engine.propagator.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field: format!("propagator.{field}"),
                message,
            },
            other => other,
        })?;
        engine.grid.q_max_for(&schedule, &payoff)?;
        if !(self.eps_rel > 0.0 && self.eps_rel < 1e-3) {
            return field("eps_rel", Error::InvalidInput(format!("must lie in (0, 1e-3), got {}", self.eps_rel)));
        }
        let v = &self.verification;
        if v.european_levels.iter().chain(&v.success_levels).any(|p| !(0.0..=1.0).contains(p)) {
            return field("verification", Error::InvalidInput("success levels must lie in [0, 1]".into()));
        }
        if !(v.superhedge_range[0] > 0.0 && v.superhedge_range[1] > v.superhedge_range[0]) {
            return field("verification.superhedge_range", Error::InvalidInput("need 0 < lo < hi".into()));
        }
        Ok(Problem {
            model,
            schedule,
            payoff,
            engine,
        })
    }
}
