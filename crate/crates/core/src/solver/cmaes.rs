//! Covariance matrix adaptation evolution strategy.
//!
//! Maximizes ℓ. Strategy parameters follow Hansen's reference defaults
//! (log-linear weights over μ = ⌊λ/2⌋ parents, cumulative step-size
//! adaptation, rank-one plus rank-μ covariance update). Candidates outside
//! the variable bounds are redrawn up to [`MAX_RESAMPLES`] times and then
//! projected coordinate-wise onto the box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::linalg;
use super::{SolverError, TerminationReason};
use crate::log_density::LogDensity;
use crate::rng::RngStream;
use crate::variable::VariableSpace;

pub const MAX_RESAMPLES: usize = 100;
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaesSettings {
    pub population_size: usize,
    pub max_generations: Option<u64>,
    /// Stop when the spread of per-generation best values over the last
    /// `value_difference_window` generations falls below this threshold.
    pub min_value_difference: Option<f64>,
    pub value_difference_window: usize,
    pub min_step_size: Option<f64>,
    pub target_value: Option<f64>,
}

impl CmaesSettings {
    pub fn new(population_size: usize) -> Self {
        CmaesSettings {
            population_size,
            max_generations: None,
            min_value_difference: None,
            value_difference_window: 10,
            min_step_size: None,
            target_value: None,
        }
    }
}

/// Normalized log-linear recombination weights wᵢ ∝ ln(μ+½) − ln i.
pub fn recombination_weights(mu: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=mu)
        .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaesState {
    settings: CmaesSettings,
    dimension: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: Vec<f64>,
    sigma: f64,
    /// Row-major n×n.
    covariance: Vec<f64>,
    path_sigma: Vec<f64>,
    path_c: Vec<f64>,
    /// Eigenvectors of C as columns (row-major storage).
    eigenvectors: Vec<f64>,
    /// Square roots of the eigenvalues of C.
    axis_lengths: Vec<f64>,
    generation: u64,
    best_value: LogDensity,
    best_params: Vec<f64>,
    value_history: VecDeque<f64>,
    last_resamples: u64,
    last_projections: u64,
    rng: RngStream,
}

impl CmaesState {
    pub fn new(
        settings: CmaesSettings,
        space: &VariableSpace,
        seed: u64,
    ) -> Result<Self, SolverError> {
        let mut mean = Vec::with_capacity(space.len());
        let mut std_devs = Vec::with_capacity(space.len());
        for (i, var) in space.variables().iter().enumerate() {
            let (m, s) = match (var.initial_value, var.lower_bound, var.upper_bound, space.prior(i))
            {
                (Some(m), lo, hi, prior) => {
                    let s = var
                        .initial_std_dev
                        .or(lo.zip(hi).map(|(lo, hi)| 0.3 * (hi - lo)))
                        .or(prior.map(|p| p.std_dev()))
                        .unwrap_or(1.0);
                    (m, s)
                }
                (None, _, _, Some(prior)) => (
                    var.clamp(prior.mean()),
                    var.initial_std_dev.unwrap_or(prior.std_dev()),
                ),
                (None, Some(lo), Some(hi), None) => {
                    (0.5 * (lo + hi), var.initial_std_dev.unwrap_or(0.3 * (hi - lo)))
                }
                _ => return Err(SolverError::MissingInitialValue(var.name.clone())),
            };
            mean.push(m);
            std_devs.push(s);
        }
        Ok(Self::with_mean(settings, mean, &std_devs, seed))
    }

    /// Fresh state with an explicit initial mean and per-coordinate spread
    /// (C = diag(spread²), σ = 1).
    pub fn with_mean(settings: CmaesSettings, mean: Vec<f64>, spread: &[f64], seed: u64) -> Self {
        let n = mean.len();
        let nf = n as f64;
        let lambda = settings.population_size.max(2);
        let mu = lambda / 2;
        let weights = recombination_weights(mu);
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

        let mut covariance = vec![0.0; n * n];
        for i in 0..n {
            covariance[i * n + i] = spread[i] * spread[i];
        }
        let mut state = CmaesState {
            settings,
            dimension: n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean,
            sigma: 1.0,
            covariance,
            path_sigma: vec![0.0; n],
            path_c: vec![0.0; n],
            eigenvectors: linalg::identity(n),
            axis_lengths: vec![1.0; n],
            generation: 0,
            best_value: LogDensity::REJECTED,
            best_params: Vec::new(),
            value_history: VecDeque::new(),
            last_resamples: 0,
            last_projections: 0,
            rng: RngStream::new(seed, "solver/cmaes"),
        };
        state
            .refresh_eigensystem()
            .expect("diagonal initial covariance is positive definite");
        state
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_max_generations(&mut self, max: Option<u64>) {
        self.settings.max_generations = max;
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn best_value(&self) -> Option<LogDensity> {
        (!self.best_params.is_empty()).then_some(self.best_value)
    }

    pub fn best_params(&self) -> &[f64] {
        &self.best_params
    }

    /// Candidates redrawn because they left the bounds, last generation.
    pub fn last_resamples(&self) -> u64 {
        self.last_resamples
    }

    pub fn last_projections(&self) -> u64 {
        self.last_projections
    }

    /// xᵢ = m + σ·B·D·zᵢ, zᵢ ~ N(0, I).
    pub fn generate(&mut self, space: &VariableSpace) -> Result<Vec<Vec<f64>>, SolverError> {
        let n = self.dimension;
        if let Some(&min) = self
            .axis_lengths
            .iter()
            .min_by(|a, b| a.total_cmp(b))
            .filter(|d| !(**d > 0.0))
        {
            return Err(SolverError::DegenerateCovariance(min));
        }
        self.last_resamples = 0;
        self.last_projections = 0;
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let mut attempt = 0;
            let candidate = loop {
                let z: Vec<f64> = (0..n)
                    .map(|i| self.axis_lengths[i] * self.rng.standard_normal())
                    .collect();
                let y = linalg::mat_vec(n, &self.eigenvectors, &z);
                let x: Vec<f64> = (0..n).map(|i| self.mean[i] + self.sigma * y[i]).collect();
                if space.is_empty() || space.within_bounds(&x) {
                    break x;
                }
                attempt += 1;
                if attempt > MAX_RESAMPLES {
                    self.last_projections += 1;
                    break x
                        .iter()
                        .zip(space.variables())
                        .map(|(xi, v)| v.clamp(*xi))
                        .collect();
                }
                self.last_resamples += 1;
            };
            out.push(candidate);
        }
        Ok(out)
    }

    pub fn update(
        &mut self,
        candidates: &[Vec<f64>],
        values: &[LogDensity],
    ) -> Result<(), SolverError> {
        if candidates.len() != self.lambda || values.len() != self.lambda {
            return Err(SolverError::PopulationMismatch {
                expected: self.lambda,
                found: candidates.len().min(values.len()),
            });
        }
        if values.iter().all(|v| v.is_rejected()) {
            return Err(SolverError::NonFiniteObjectiveCount(self.lambda));
        }
        let n = self.dimension;
        let nf = n as f64;

        // best first; stable, so ties keep candidate order
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

        let top = order[0];
        if self.best_params.is_empty() || values[top] > self.best_value {
            self.best_value = values[top];
            self.best_params = candidates[top].clone();
        }
        self.value_history.push_back(values[top].value());
        while self.value_history.len() > self.settings.value_difference_window.max(1) {
            self.value_history.pop_front();
        }

        let steps: Vec<Vec<f64>> = order[..self.mu]
            .iter()
            .map(|&k| {
                (0..n)
                    .map(|i| (candidates[k][i] - self.mean[i]) / self.sigma)
                    .collect()
            })
            .collect();
        let mut y_w = vec![0.0; n];
        for (w, y) in self.weights.iter().zip(&steps) {
            for i in 0..n {
                y_w[i] += w * y[i];
            }
        }
        for i in 0..n {
            self.mean[i] += self.sigma * y_w[i];
        }

        // C^{-1/2} y_w = B D⁻¹ Bᵀ y_w
        let bt_y = linalg::mat_t_vec(n, &self.eigenvectors, &y_w);
        let scaled: Vec<f64> = bt_y
            .iter()
            .zip(&self.axis_lengths)
            .map(|(v, d)| v / d)
            .collect();
        let c_inv_sqrt_y = linalg::mat_vec(n, &self.eigenvectors, &scaled);

        let cs = (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        for i in 0..n {
            self.path_sigma[i] = (1.0 - self.c_sigma) * self.path_sigma[i] + cs * c_inv_sqrt_y[i];
        }
        let ps_norm = linalg::norm(&self.path_sigma);
        self.generation += 1;
        let decay = 1.0 - (1.0 - self.c_sigma).powf(2.0 * self.generation as f64);
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (nf + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        let cc = (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt();
        for i in 0..n {
            self.path_c[i] = (1.0 - self.c_c) * self.path_c[i] + h_sigma * cc * y_w[i];
        }

        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let keep = 1.0 - self.c_1 - self.c_mu;
        for r in 0..n {
            for c in 0..n {
                let rank_mu: f64 = self
                    .weights
                    .iter()
                    .zip(&steps)
                    .map(|(w, y)| w * y[r] * y[c])
                    .sum();
                let idx = r * n + c;
                self.covariance[idx] = keep * self.covariance[idx]
                    + self.c_1
                        * (self.path_c[r] * self.path_c[c] + delta_h * self.covariance[idx])
                    + self.c_mu * rank_mu;
            }
        }

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.refresh_eigensystem()
    }

    /// Symmetrizes C, re-conditions it when its condition number exceeds
    /// [`MAX_CONDITION`], and refreshes the B/D cache.
    fn refresh_eigensystem(&mut self) -> Result<(), SolverError> {
        let n = self.dimension;
        for r in 0..n {
            for c in (r + 1)..n {
                let avg = 0.5 * (self.covariance[r * n + c] + self.covariance[c * n + r]);
                self.covariance[r * n + c] = avg;
                self.covariance[c * n + r] = avg;
            }
        }
        let (mut vectors, mut values) = linalg::sym_eigen(n, &self.covariance);
        let max = values.iter().copied().fold(f64::MIN, f64::max);
        let min = values.iter().copied().fold(f64::MAX, f64::min);
        if n > 0 && (min <= 0.0 || max / min > MAX_CONDITION) && max > 0.0 {
            let shift = max / MAX_CONDITION - min;
            for i in 0..n {
                self.covariance[i * n + i] += shift;
            }
            (vectors, values) = linalg::sym_eigen(n, &self.covariance);
        }
        if let Some(bad) = values.iter().copied().find(|v| !(*v > 0.0)) {
            return Err(SolverError::DegenerateCovariance(bad));
        }
        self.eigenvectors = vectors;
        self.axis_lengths = values.iter().map(|v| v.sqrt()).collect();
        Ok(())
    }

    pub fn check_termination(&self) -> Option<TerminationReason> {
        let s = &self.settings;
        if s.max_generations.is_some_and(|max| self.generation >= max) {
            return Some(TerminationReason::MaxGenerations);
        }
        if let Some(threshold) = s.min_value_difference {
            if self.value_history.len() >= s.value_difference_window.max(1) {
                let hi = self.value_history.iter().copied().fold(f64::MIN, f64::max);
                let lo = self.value_history.iter().copied().fold(f64::MAX, f64::min);
                if hi.is_finite() && lo.is_finite() && hi - lo < threshold {
                    return Some(TerminationReason::MinValueDifference);
                }
            }
        }
        if s.min_step_size.is_some_and(|floor| self.sigma < floor) {
            return Some(TerminationReason::MinStepSize);
        }
        if let (Some(target), Some(best)) = (s.target_value, self.best_value()) {
            if best.is_finite() && best.value() >= target {
                return Some(TerminationReason::TargetValue);
            }
        }
        None
    }
}
