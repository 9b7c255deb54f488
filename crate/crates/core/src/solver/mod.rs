//! Population-based solvers behind a common generation interface.
//!
//! A solver alternates [`SolverState::generate`] (produce one generation's
//! candidates) and [`SolverState::update`] (consume their derived
//! quantities). Everything a solver needs to continue, including its random
//! streams, lives in its serializable state.

pub mod cmaes;
mod linalg;
pub mod tmcmc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log_density::LogDensity;
use crate::problem::Derived;
use crate::variable::VariableSpace;

pub use cmaes::{CmaesSettings, CmaesState};
pub use tmcmc::{anneal_exponent, TmcmcSettings, TmcmcState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("covariance matrix is degenerate (smallest eigenvalue {0:e})")]
    DegenerateCovariance(f64),
    #[error("all {0} candidates have a non-finite objective")]
    NonFiniteObjectiveCount(usize),
    #[error("every sample has a non-finite log-likelihood")]
    AllLikelihoodsNonFinite,
    #[error("expected {expected} evaluated candidates, got {found}")]
    PopulationMismatch { expected: usize, found: usize },
    #[error("variable '{0}' needs an initial value, a prior or both bounds")]
    MissingInitialValue(String),
    #[error("variable '{0}' needs a prior distribution")]
    MissingPrior(String),
    #[error("could not draw variable '{0}' from its prior inside its bounds")]
    BoundsUnsatisfiable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    MaxGenerations,
    MinValueDifference,
    MinStepSize,
    TargetValue,
    AnnealingComplete,
    MaxModelEvaluations,
    MaxWallTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolverSettings {
    Cmaes(CmaesSettings),
    Tmcmc(TmcmcSettings),
}

impl SolverSettings {
    pub fn max_generations(&self) -> Option<u64> {
        match self {
            SolverSettings::Cmaes(s) => s.max_generations,
            SolverSettings::Tmcmc(s) => s.max_generations,
        }
    }

    pub fn population_size(&self) -> usize {
        match self {
            SolverSettings::Cmaes(s) => s.population_size,
            SolverSettings::Tmcmc(s) => s.population_size,
        }
    }
}

/// One row of per-generation progress.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSummary {
    pub best_value: Option<LogDensity>,
    pub best_params: Vec<f64>,
    pub annealing_exponent: Option<f64>,
    pub log_evidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolverState {
    Cmaes(CmaesState),
    Tmcmc(TmcmcState),
}

impl SolverState {
    pub fn new(
        settings: &SolverSettings,
        space: &VariableSpace,
        seed: u64,
    ) -> Result<Self, SolverError> {
        Ok(match settings {
            SolverSettings::Cmaes(s) => SolverState::Cmaes(CmaesState::new(s.clone(), space, seed)?),
            SolverSettings::Tmcmc(s) => SolverState::Tmcmc(TmcmcState::new(s.clone(), space, seed)?),
        })
    }

    /// Number of candidates the next call to `generate` will produce.
    pub fn population_size(&self) -> usize {
        match self {
            SolverState::Cmaes(s) => s.lambda(),
            SolverState::Tmcmc(s) => s.pending_population(),
        }
    }

    pub fn generation(&self) -> u64 {
        match self {
            SolverState::Cmaes(s) => s.generation(),
            SolverState::Tmcmc(s) => s.generation(),
        }
    }

    pub fn set_max_generations(&mut self, max: Option<u64>) {
        match self {
            SolverState::Cmaes(s) => s.set_max_generations(max),
            SolverState::Tmcmc(s) => s.set_max_generations(max),
        }
    }

    pub fn generate(&mut self, space: &VariableSpace) -> Result<Vec<Vec<f64>>, SolverError> {
        match self {
            SolverState::Cmaes(s) => s.generate(space),
            SolverState::Tmcmc(s) => s.generate(space),
        }
    }

    pub fn update(
        &mut self,
        candidates: &[Vec<f64>],
        derived: &[Derived],
    ) -> Result<(), SolverError> {
        match self {
            SolverState::Cmaes(s) => {
                let values: Vec<LogDensity> = derived.iter().map(Derived::value).collect();
                s.update(candidates, &values)
            }
            SolverState::Tmcmc(s) => s.update(candidates, derived),
        }
    }

    pub fn check_termination(&self) -> Option<TerminationReason> {
        match self {
            SolverState::Cmaes(s) => s.check_termination(),
            SolverState::Tmcmc(s) => s.check_termination(),
        }
    }

    pub fn summary(&self) -> GenerationSummary {
        match self {
            SolverState::Cmaes(s) => GenerationSummary {
                best_value: s.best_value(),
                best_params: s.best_params().to_vec(),
                annealing_exponent: None,
                log_evidence: None,
            },
            SolverState::Tmcmc(s) => {
                let (best_value, best_params) = s.best_sample();
                GenerationSummary {
                    best_value,
                    best_params,
                    annealing_exponent: Some(s.annealing_exponent()),
                    log_evidence: Some(s.log_evidence()),
                }
            }
        }
    }
}
