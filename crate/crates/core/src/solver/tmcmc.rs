//! Transitional Markov chain Monte Carlo.
//!
//! The likelihood is tempered by an exponent ρ that climbs from 0 to 1. Each
//! stage picks the next ρ so the importance weights hit a target coefficient
//! of variation, resamples the population in proportion to those weights and
//! moves every resampled particle with `chain_length` Metropolis–Hastings
//! steps. With the default chain length of 1 this is the reduced-bias
//! single-step variant.
//!
//! One call to `generate`/`update` is one generation: the first evaluates
//! draws from the prior, each later one evaluates one proposal per chain.

use serde::{Deserialize, Serialize};

use super::linalg;
use super::{SolverError, TerminationReason};
use crate::log_density::LogDensity;
use crate::problem::Derived;
use crate::rng::RngStream;
use crate::variable::VariableSpace;

pub const ANNEAL_TOLERANCE: f64 = 1e-8;
const MAX_PRIOR_REDRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmcmcSettings {
    pub population_size: usize,
    /// β², multiplier on the weighted sample covariance.
    pub covariance_scaling: f64,
    pub chain_length: usize,
    pub target_cov: f64,
    pub max_generations: Option<u64>,
}

impl TmcmcSettings {
    pub fn new(population_size: usize) -> Self {
        TmcmcSettings {
            population_size,
            covariance_scaling: 0.04,
            chain_length: 1,
            target_cov: 1.0,
            max_generations: None,
        }
    }
}

/// Coefficient of variation of wᵢ = exp(Δρ·(ℓᵢ − max ℓ)), N−1 denominator.
fn weight_cov(loglikes: &[f64], max: f64, delta: f64) -> f64 {
    let w: Vec<f64> = loglikes.iter().map(|l| (delta * (l - max)).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}

/// Next annealing exponent: the largest step whose weights have coefficient
/// of variation at most `target_cov`, found by bisection on Δρ and clamped
/// to 1.
pub fn anneal_exponent(loglikes: &[f64], rho_prev: f64, target_cov: f64) -> Result<f64, SolverError> {
    let max = loglikes
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SolverError::AllLikelihoodsNonFinite);
    }
    let span = 1.0 - rho_prev;
    if loglikes.len() < 2 || weight_cov(loglikes, max, span) <= target_cov {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, span);
    while hi - lo > ANNEAL_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if weight_cov(loglikes, max, mid) > target_cov {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((rho_prev + 0.5 * (lo + hi)).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Waiting for the prior draws to be evaluated.
    Initial,
    /// Running the MH pass of the current stage; `step` proposals done.
    Moving { step: usize },
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmcmcState {
    settings: TmcmcSettings,
    dimension: usize,
    phase: Phase,
    rho: f64,
    log_evidence: f64,
    /// Current chain positions (row per particle) and their terms.
    samples: Vec<Vec<f64>>,
    terms: Vec<Derived>,
    /// Lower Cholesky factor of β²·Σ_w, row-major.
    proposal_factor: Vec<f64>,
    generation: u64,
    accepted: u64,
    proposed: u64,
    rng: RngStream,
    prior_rng: RngStream,
}

impl TmcmcState {
    pub fn new(
        settings: TmcmcSettings,
        space: &VariableSpace,
        seed: u64,
    ) -> Result<Self, SolverError> {
        for (i, var) in space.variables().iter().enumerate() {
            if space.prior(i).is_none() {
                return Err(SolverError::MissingPrior(var.name.clone()));
            }
        }
        Ok(TmcmcState {
            dimension: space.len(),
            phase: Phase::Initial,
            rho: 0.0,
            log_evidence: 0.0,
            samples: Vec::new(),
            terms: Vec::new(),
            proposal_factor: Vec::new(),
            generation: 0,
            accepted: 0,
            proposed: 0,
            rng: RngStream::new(seed, "solver/tmcmc"),
            prior_rng: RngStream::new(seed, "solver/tmcmc/prior"),
            settings,
        })
    }

    pub fn pending_population(&self) -> usize {
        self.settings.population_size
    }

    pub fn set_max_generations(&mut self, max: Option<u64>) {
        self.settings.max_generations = max;
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn annealing_exponent(&self) -> f64 {
        self.rho
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn terms(&self) -> &[Derived] {
        &self.terms
    }

    /// Fraction of MH proposals accepted so far.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Highest tempered posterior in the current population.
    pub fn best_sample(&self) -> (Option<LogDensity>, Vec<f64>) {
        self.terms
            .iter()
            .zip(&self.samples)
            .map(|(t, x)| (self.tempered(t), x))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map_or((None, Vec::new()), |(v, x)| (Some(v), x.clone()))
    }

    fn tempered(&self, t: &Derived) -> LogDensity {
        t.prior + t.data.tempered(self.rho)
    }

    pub fn generate(&mut self, space: &VariableSpace) -> Result<Vec<Vec<f64>>, SolverError> {
        let p = self.settings.population_size;
        match self.phase {
            Phase::Initial => {
                let mut out = Vec::with_capacity(p);
                for _ in 0..p {
                    let mut x = Vec::with_capacity(self.dimension);
                    for (i, var) in space.variables().iter().enumerate() {
                        let prior = space
                            .prior(i)
                            .ok_or_else(|| SolverError::MissingPrior(var.name.clone()))?;
                        let mut tries = 0;
                        let v = loop {
                            let v = prior.sample(&mut self.prior_rng);
                            if var.within_bounds(v) {
                                break v;
                            }
                            tries += 1;
                            if tries >= MAX_PRIOR_REDRAWS {
                                return Err(SolverError::BoundsUnsatisfiable(var.name.clone()));
                            }
                        };
                        x.push(v);
                    }
                    out.push(x);
                }
                Ok(out)
            }
            Phase::Moving { .. } => {
                let n = self.dimension;
                Ok(self
                    .samples
                    .iter()
                    .map(|x| {
                        let z: Vec<f64> = (0..n).map(|_| self.rng.standard_normal()).collect();
                        let step = linalg::mat_vec(n, &self.proposal_factor, &z);
                        x.iter().zip(step).map(|(a, b)| a + b).collect()
                    })
                    .collect())
            }
            Phase::Done => Ok(Vec::new()),
        }
    }

    pub fn update(&mut self, candidates: &[Vec<f64>], derived: &[Derived]) -> Result<(), SolverError> {
        let p = self.settings.population_size;
        if candidates.len() != p || derived.len() != p {
            return Err(SolverError::PopulationMismatch {
                expected: p,
                found: candidates.len().min(derived.len()),
            });
        }
        match self.phase {
            Phase::Initial => {
                self.samples = candidates.to_vec();
                self.terms = derived.to_vec();
                self.generation += 1;
                self.begin_stage()
            }
            Phase::Moving { step } => {
                for i in 0..p {
                    let proposed = self.tempered(&derived[i]);
                    let current = self.tempered(&self.terms[i]);
                    let u = self.rng.uniform();
                    self.proposed += 1;
                    if proposed.is_finite() && u.ln() < proposed.value() - current.value() {
                        self.samples[i] = candidates[i].clone();
                        self.terms[i] = derived[i];
                        self.accepted += 1;
                    }
                }
                self.generation += 1;
                let step = step + 1;
                if step < self.settings.chain_length.max(1) {
                    self.phase = Phase::Moving { step };
                    Ok(())
                } else if self.rho >= 1.0 {
                    self.phase = Phase::Done;
                    Ok(())
                } else {
                    self.begin_stage()
                }
            }
            Phase::Done => Ok(()),
        }
    }

    /// Picks the next ρ, accumulates the evidence, resamples and builds the
    /// proposal covariance for the coming MH pass.
    fn begin_stage(&mut self) -> Result<(), SolverError> {
        let n = self.dimension;
        let p = self.samples.len();
        let loglikes: Vec<f64> = self.terms.iter().map(|t| t.data.value()).collect();
        let next = anneal_exponent(&loglikes, self.rho, self.settings.target_cov)?;
        let delta = next - self.rho;
        let max = loglikes
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = loglikes.iter().map(|l| (delta * (l - max)).exp()).collect();
        let total: f64 = weights.iter().sum();
        self.log_evidence += delta * max + (total / p as f64).ln();
        self.rho = next;

        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut mean = vec![0.0; n];
        for (w, x) in normalized.iter().zip(&self.samples) {
            for d in 0..n {
                mean[d] += w * x[d];
            }
        }
        let mut cov = vec![0.0; n * n];
        for (w, x) in normalized.iter().zip(&self.samples) {
            for r in 0..n {
                for c in 0..n {
                    cov[r * n + c] += w * (x[r] - mean[r]) * (x[c] - mean[c]);
                }
            }
        }
        let beta2 = self.settings.covariance_scaling;
        cov.iter_mut().for_each(|v| *v *= beta2);
        self.proposal_factor = linalg::cholesky_with_jitter(n, &cov);

        let mut cumulative = Vec::with_capacity(p);
        let mut acc = 0.0;
        for w in &normalized {
            acc += w;
            cumulative.push(acc);
        }
        let mut samples = Vec::with_capacity(p);
        let mut terms = Vec::with_capacity(p);
        for _ in 0..p {
            let u = self.rng.uniform() * acc;
            let k = cumulative.partition_point(|c| *c <= u).min(p - 1);
            samples.push(self.samples[k].clone());
            terms.push(self.terms[k]);
        }
        self.samples = samples;
        self.terms = terms;
        self.phase = Phase::Moving { step: 0 };
        Ok(())
    }

    pub fn check_termination(&self) -> Option<TerminationReason> {
        if self.phase == Phase::Done {
            return Some(TerminationReason::AnnealingComplete);
        }
        if self
            .settings
            .max_generations
            .is_some_and(|max| self.generation >= max)
        {
            return Some(TerminationReason::MaxGenerations);
        }
        None
    }
}
