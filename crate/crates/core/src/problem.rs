//! Problem types: turn raw model output into the derived quantity ℓ.
//!
//! | problem            | model writes                                   | ℓ                          |
//! |--------------------|------------------------------------------------|----------------------------|
//! | Optimization       | `"F(x)"`                                       | F(x)                       |
//! | Sampling           | `"logP(x)"`                                    | logP(x)                    |
//! | Bayesian Inference | `"Reference Evaluations"`, `"Standard Deviation"` | log-likelihood + log-prior |

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::distribution::NEG_HALF_LN_2PI;
use crate::log_density::LogDensity;
use crate::variable::VariableSpace;

pub const OBJECTIVE_KEY: &str = "F(x)";
pub const LOG_DENSITY_KEY: &str = "logP(x)";
pub const REFERENCE_EVALUATIONS_KEY: &str = "Reference Evaluations";
pub const STANDARD_DEVIATION_KEY: &str = "Standard Deviation";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("model result is missing key '{0}'")]
    MissingResultKey(String),
    #[error("model result key '{key}' has the wrong shape (expected {expected})")]
    WrongResultShape { key: String, expected: &'static str },
    #[error("length mismatch: {what} has {found} entries, reference data has {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("variable '{0}' has no resolved prior distribution")]
    UnresolvedPrior(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LikelihoodModel {
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProblemKind {
    Optimization,
    Sampling,
    BayesianInference {
        likelihood: LikelihoodModel,
        reference_data: Vec<f64>,
        /// Variable broadcast as σ when the model does not write
        /// `"Standard Deviation"`.
        sigma_variable: String,
    },
}

impl ProblemKind {
    /// Result keys the model must populate.
    pub fn required_keys(&self) -> &'static [&'static str] {
        match self {
            ProblemKind::Optimization => &[OBJECTIVE_KEY],
            ProblemKind::Sampling => &[LOG_DENSITY_KEY],
            ProblemKind::BayesianInference { .. } => &[REFERENCE_EVALUATIONS_KEY],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResultValue {
    Real(f64),
    Vector(Vec<f64>),
}

impl From<f64> for ResultValue {
    fn from(v: f64) -> Self {
        ResultValue::Real(v)
    }
}

impl From<Vec<f64>> for ResultValue {
    fn from(v: Vec<f64>) -> Self {
        ResultValue::Vector(v)
    }
}

impl Serialize for ResultValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ResultValue::Real(v) => crate::ext_f64::serialize(v, serializer),
            ResultValue::Vector(v) => crate::ext_f64::vec::serialize(v, serializer),
        }
    }
}

impl<'de> Deserialize<'de> for ResultValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let value = serde_json::Value::deserialize(deserializer)?;
        let scalar = |v: &serde_json::Value| -> Option<f64> {
            match v {
                serde_json::Value::Number(n) => n.as_f64(),
                serde_json::Value::String(s) => match s.as_str() {
                    "inf" => Some(f64::INFINITY),
                    "-inf" => Some(f64::NEG_INFINITY),
                    "nan" => Some(f64::NAN),
                    _ => None,
                },
                _ => None,
            }
        };
        match &value {
            serde_json::Value::Array(items) => items
                .iter()
                .map(scalar)
                .collect::<Option<Vec<_>>>()
                .map(ResultValue::Vector)
                .ok_or_else(|| D::Error::custom("result vectors must hold numbers")),
            other => scalar(other)
                .map(ResultValue::Real)
                .ok_or_else(|| D::Error::custom("result values must be numbers or lists")),
        }
    }
}

/// Key/value store written by a computational model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleResult(BTreeMap<String, ResultValue>);

impl SampleResult {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<ResultValue>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<ResultValue>) -> Self {
        self.set(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&ResultValue> {
        self.0.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ResultValue)> {
        self.0.iter()
    }

    pub fn real(&self, key: &str) -> Result<f64, ProblemError> {
        match self.0.get(key) {
            Some(ResultValue::Real(v)) => Ok(*v),
            Some(ResultValue::Vector(_)) => Err(ProblemError::WrongResultShape {
                key: key.to_string(),
                expected: "a real",
            }),
            None => Err(ProblemError::MissingResultKey(key.to_string())),
        }
    }

    pub fn vector(&self, key: &str) -> Result<&[f64], ProblemError> {
        match self.0.get(key) {
            Some(ResultValue::Vector(v)) => Ok(v),
            Some(ResultValue::Real(_)) => Err(ProblemError::WrongResultShape {
                key: key.to_string(),
                expected: "a list of reals",
            }),
            None => Err(ProblemError::MissingResultKey(key.to_string())),
        }
    }
}

/// ℓ split into its data-dependent term and its prior term.
///
/// * Optimization: `data = F(x)`, `prior` = 0 inside the bounds.
/// * Sampling: `data = logP(x) - prior`, so that `value() = logP(x)`.
/// * Bayesian inference: `data` = log-likelihood, `prior` = log-prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub data: LogDensity,
    pub prior: LogDensity,
}

impl Derived {
    pub const FAILED: Derived = Derived {
        data: LogDensity::REJECTED,
        prior: LogDensity::REJECTED,
    };

    pub fn value(&self) -> LogDensity {
        self.data + self.prior
    }
}

/// Σᵢ [ −½((yᵢ−fᵢ)/σᵢ)² − ln σᵢ − ½ln(2π) ]. Non-positive or non-finite σ,
/// and non-finite evaluations, give the rejection sentinel.
pub fn log_likelihood_normal(
    reference: &[f64],
    evaluations: &[f64],
    std_devs: &[f64],
) -> Result<LogDensity, ProblemError> {
    if evaluations.len() != reference.len() {
        return Err(ProblemError::LengthMismatch {
            what: REFERENCE_EVALUATIONS_KEY.into(),
            expected: reference.len(),
            found: evaluations.len(),
        });
    }
    if std_devs.len() != reference.len() {
        return Err(ProblemError::LengthMismatch {
            what: STANDARD_DEVIATION_KEY.into(),
            expected: reference.len(),
            found: std_devs.len(),
        });
    }
    let mut total = 0.0;
    for ((y, f), s) in reference.iter().zip(evaluations).zip(std_devs) {
        if !(s.is_finite() && *s > 0.0 && f.is_finite()) {
            return Ok(LogDensity::REJECTED);
        }
        let z = (y - f) / s;
        total += -0.5 * z * z - s.ln() + NEG_HALF_LN_2PI;
    }
    Ok(LogDensity::new(total))
}

/// Sum of per-variable prior log-densities, with variable bounds applied as
/// a hard rejection.
pub fn log_prior(params: &[f64], space: &VariableSpace) -> Result<LogDensity, ProblemError> {
    let mut total = LogDensity::ZERO;
    for (i, (var, x)) in space.variables().iter().zip(params).enumerate() {
        let prior = space
            .prior(i)
            .ok_or_else(|| ProblemError::UnresolvedPrior(var.name.clone()))?;
        if !var.within_bounds(*x) {
            return Ok(LogDensity::REJECTED);
        }
        total = total + prior.log_pdf(*x);
    }
    Ok(total)
}

/// Computes ℓ for one evaluated sample.
pub fn derive_quantity(
    kind: &ProblemKind,
    params: &[f64],
    result: &SampleResult,
    space: &VariableSpace,
) -> Result<Derived, ProblemError> {
    match kind {
        ProblemKind::Optimization => {
            let f = result.real(OBJECTIVE_KEY)?;
            Ok(Derived {
                data: LogDensity::new(f),
                prior: space.bounds_log_density(params),
            })
        }
        ProblemKind::Sampling => {
            let log_p = LogDensity::new(result.real(LOG_DENSITY_KEY)?);
            let prior = if space.all_priors_resolved() {
                log_prior(params, space)?
            } else {
                space.bounds_log_density(params)
            };
            let data = if prior.is_rejected() || log_p.is_rejected() {
                LogDensity::REJECTED
            } else {
                LogDensity::new(log_p.value() - prior.value())
            };
            Ok(Derived { data, prior })
        }
        ProblemKind::BayesianInference {
            reference_data,
            sigma_variable,
            ..
        } => {
            let evaluations = result.vector(REFERENCE_EVALUATIONS_KEY)?;
            let broadcast;
            let std_devs = match result.get(STANDARD_DEVIATION_KEY) {
                Some(_) => result.vector(STANDARD_DEVIATION_KEY)?,
                None => {
                    let idx = space.index_of(sigma_variable).ok_or_else(|| {
                        ProblemError::MissingResultKey(STANDARD_DEVIATION_KEY.into())
                    })?;
                    broadcast = vec![params[idx]; reference_data.len()];
                    &broadcast
                }
            };
            let data = log_likelihood_normal(reference_data, evaluations, std_devs)?;
            let prior = log_prior(params, space)?;
            Ok(Derived { data, prior })
        }
    }
}
