//! Named experiment variables and the space they span.

use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::log_density::LogDensity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub prior_name: Option<String>,
    pub initial_value: Option<f64>,
    pub initial_std_dev: Option<f64>,
}

impl Variable {
    pub fn new(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            lower_bound: None,
            upper_bound: None,
            prior_name: None,
            initial_value: None,
            initial_std_dev: None,
        }
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower_bound = Some(lower);
        self.upper_bound = Some(upper);
        self
    }

    pub fn with_prior(mut self, prior: impl Into<String>) -> Self {
        self.prior_name = Some(prior.into());
        self
    }

    pub fn within_bounds(&self, x: f64) -> bool {
        self.lower_bound.is_none_or(|lo| x >= lo) && self.upper_bound.is_none_or(|hi| x <= hi)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let x = self.lower_bound.map_or(x, |lo| x.max(lo));
        self.upper_bound.map_or(x, |hi| x.min(hi))
    }
}

/// Variables in declaration order with their priors resolved.
///
/// Bounds and priors may coexist on one variable: the prior supplies the
/// density and the bounds act as a hard rejection on top of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpace {
    variables: Vec<Variable>,
    priors: Vec<Option<Distribution>>,
}

impl VariableSpace {
    /// Caller guarantees names are unique and priors resolve; the config
    /// layer checks both.
    pub fn new(variables: Vec<Variable>, distributions: &[Distribution]) -> Self {
        let priors = variables
            .iter()
            .map(|v| {
                v.prior_name
                    .as_ref()
                    .and_then(|p| distributions.iter().find(|d| &d.name == p).cloned())
            })
            .collect();
        VariableSpace { variables, priors }
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn prior(&self, i: usize) -> Option<&Distribution> {
        self.priors[i].as_ref()
    }

    pub fn all_priors_resolved(&self) -> bool {
        self.priors.iter().all(Option::is_some)
    }

    pub fn within_bounds(&self, params: &[f64]) -> bool {
        self.variables
            .iter()
            .zip(params)
            .all(|(v, x)| v.within_bounds(*x))
    }

    /// Bound check alone: zero inside, sentinel outside.
    pub fn bounds_log_density(&self, params: &[f64]) -> LogDensity {
        if self.within_bounds(params) {
            LogDensity::ZERO
        } else {
            LogDensity::REJECTED
        }
    }
}
