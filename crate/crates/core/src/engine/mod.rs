//! The generation loop.
//!
//! For every experiment: check termination, generate candidates, submit
//! them to the conduit, collect the results, derive ℓ, update the solver and
//! store the generation. Several experiments share one conduit and advance
//! independently.

pub mod checkpoint;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::conduit::{
    interleave, Backend, Batch, Conduit, ExperimentId, ModelBinding, Participant, SampleId,
    SampleOutcome,
};
use crate::config::{ConfigError, ConfigTree, ExperimentSettings};
use crate::problem::{derive_quantity, Derived, ProblemError};
use crate::solver::{SolverError, SolverState, TerminationReason};

pub use checkpoint::ResultStore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("experiment '{0}' has no computational model")]
    NoModel(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Initialized,
    Running,
    Finished,
}

/// Everything needed to continue an experiment, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub name: String,
    pub config: ConfigTree,
    pub status: Status,
    /// Completed solver updates.
    pub generation: u64,
    pub evaluations: u64,
    pub next_sample_id: u64,
    pub solver: SolverState,
    pub termination: Option<TerminationReason>,
    pub warning: Option<String>,
}

/// Best parameters after one generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: u64,
    pub best_value: Option<f64>,
    pub best_params: Vec<f64>,
}

pub struct Experiment {
    id: ExperimentId,
    state: ExperimentState,
    settings: ExperimentSettings,
    binding: ModelBinding,
    names: Arc<Vec<String>>,
    store: Option<ResultStore>,
    stint: Option<u64>,
    started: Option<Instant>,
    generation_started: Option<Instant>,
    in_flight: Option<Vec<Vec<f64>>>,
    error: Option<String>,
    trajectory: Vec<GenerationRecord>,
}

impl Experiment {
    /// A fresh experiment evaluated by `binding`.
    pub fn new(
        name: impl Into<String>,
        settings: ExperimentSettings,
        binding: ModelBinding,
    ) -> Result<Self, EngineError> {
        let solver = SolverState::new(&settings.solver, &settings.space, settings.seed)?;
        let state = ExperimentState {
            name: name.into(),
            config: settings.config.clone(),
            status: Status::Initialized,
            generation: 0,
            evaluations: 0,
            next_sample_id: 0,
            solver,
            termination: None,
            warning: None,
        };
        Ok(Self::from_parts(state, settings, binding))
    }

    /// A fresh experiment evaluated by the external model its settings
    /// declare.
    pub fn from_settings(
        name: impl Into<String>,
        settings: ExperimentSettings,
    ) -> Result<Self, EngineError> {
        let name = name.into();
        let binding = settings
            .problem
            .model
            .clone()
            .map(ModelBinding::Concurrent)
            .ok_or_else(|| EngineError::NoModel(name.clone()))?;
        Self::new(name, settings, binding)
    }

    fn from_parts(state: ExperimentState, settings: ExperimentSettings, binding: ModelBinding) -> Self {
        Experiment {
            id: ExperimentId(0),
            names: Arc::new(settings.space.names()),
            state,
            settings,
            binding,
            store: None,
            stint: None,
            started: None,
            generation_started: None,
            in_flight: None,
            error: None,
            trajectory: Vec::new(),
        }
    }

    /// Continues from a checkpoint file, a `latest` pointer or a results
    /// directory. Outputs go to the checkpoint's directory; log rows past the
    /// checkpoint are dropped. With `binding` absent the configured external
    /// model is used.
    pub fn resume(path: &Path, binding: Option<ModelBinding>) -> Result<Self, EngineError> {
        let file = checkpoint::resolve_checkpoint(path)?;
        let state = checkpoint::load(&file)?;
        let settings = ExperimentSettings::from_tree(&state.config)?;
        let binding = match binding {
            Some(b) => b,
            None => settings
                .problem
                .model
                .clone()
                .map(ModelBinding::Concurrent)
                .ok_or_else(|| EngineError::NoModel(state.name.clone()))?,
        };
        let dir = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        let store = ResultStore::create(dir, settings.output.keep_checkpoints)?;
        if let Some(index) = state.generation.checked_sub(1) {
            store.truncate_logs(index)?;
        }
        let mut exp = Self::from_parts(state, settings, binding);
        exp.store = Some(store);
        Ok(exp)
    }

    /// Restores an in-memory state without touching the disk.
    pub fn from_state(state: ExperimentState, binding: ModelBinding) -> Result<Self, EngineError> {
        let settings = ExperimentSettings::from_tree(&state.config)?;
        Ok(Self::from_parts(state, settings, binding))
    }

    /// Writes checkpoints and logs to `outdir/<name>`.
    pub fn with_output(mut self, outdir: &Path) -> Result<Self, EngineError> {
        let dir = outdir.join(&self.state.name);
        self.store = Some(ResultStore::create(dir, self.settings.output.keep_checkpoints)?);
        Ok(self)
    }

    /// Stops after `generations` more generations in this invocation,
    /// leaving the experiment resumable.
    pub fn with_stint(mut self, generations: u64) -> Self {
        self.stint = Some(generations);
        self
    }

    /// Allows `extra` generations beyond the current one even if the
    /// configured generation cap was reached, and runs exactly that many.
    pub fn extend_generations(&mut self, extra: u64) -> Result<(), EngineError> {
        let target = self.state.generation + extra;
        let cap = self.settings.solver.max_generations();
        if cap.is_some_and(|c| c < target) {
            let mut config = self.state.config.clone();
            config.set("Solver/Max Generations", target);
            let settings = ExperimentSettings::from_tree(&config)?;
            self.state.solver.set_max_generations(Some(target));
            self.state.config = settings.config.clone();
            self.settings = settings;
        }
        if matches!(
            self.state.termination,
            Some(TerminationReason::MaxGenerations | TerminationReason::MaxModelEvaluations)
        ) {
            self.state.termination = None;
            self.state.warning = None;
            self.state.status = Status::Running;
        }
        self.stint = Some(extra);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.state.name
    }

    pub fn id(&self) -> ExperimentId {
        self.id
    }

    pub fn state(&self) -> &ExperimentState {
        &self.state
    }

    pub fn settings(&self) -> &ExperimentSettings {
        &self.settings
    }

    pub fn results_dir(&self) -> Option<&Path> {
        self.store.as_ref().map(ResultStore::dir)
    }

    /// The error that aborted this experiment, if any.
    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.status == Status::Finished
    }

    /// Best parameters after each generation run in this invocation.
    pub fn trajectory(&self) -> &[GenerationRecord] {
        &self.trajectory
    }

    fn termination_reason(&mut self) -> Option<TerminationReason> {
        if let Some(reason) = self.state.solver.check_termination() {
            if reason == TerminationReason::MaxGenerations {
                if let SolverState::Tmcmc(t) = &self.state.solver {
                    self.state.warning = Some(format!(
                        "generation cap reached before annealing finished (rho = {})",
                        t.annealing_exponent()
                    ));
                }
            }
            return Some(reason);
        }
        let population = self.state.solver.population_size() as u64;
        if self
            .settings
            .caps
            .max_model_evaluations
            .is_some_and(|cap| self.state.evaluations + population > cap)
        {
            return Some(TerminationReason::MaxModelEvaluations);
        }
        if let (Some(limit), Some(started)) = (self.settings.caps.max_wall_time_secs, self.started) {
            if started.elapsed().as_secs_f64() >= limit {
                return Some(TerminationReason::MaxWallTime);
            }
        }
        None
    }

    fn abort(&mut self, error: impl std::fmt::Display) {
        let msg = error.to_string();
        log::error!("experiment '{}' aborted: {msg}", self.state.name);
        self.error = Some(msg);
        self.state.status = Status::Finished;
        self.in_flight = None;
        self.write_final();
    }

    fn finish(&mut self, reason: TerminationReason) {
        log::info!("experiment '{}' finished: {reason:?}", self.state.name);
        self.state.termination = Some(reason);
        self.state.status = Status::Finished;
        self.write_final();
    }

    /// Final report; a copy of it is kept in `result.json`.
    pub fn report(&self) -> serde_json::Value {
        let summary = self.state.solver.summary();
        let best: serde_json::Map<String, serde_json::Value> = self
            .names
            .iter()
            .zip(&summary.best_params)
            .map(|(n, v)| (n.clone(), json!(v)))
            .collect();
        json!({
            "name": self.state.name,
            "status": self.state.status,
            "termination": self.state.termination,
            "warning": self.state.warning,
            "error": self.error,
            "generations": self.state.generation,
            "evaluations": self.state.evaluations,
            "best_value": summary.best_value.map(|v| v.to_string()),
            "best_params": best,
            "annealing_exponent": summary.annealing_exponent,
            "log_evidence": summary.log_evidence,
        })
    }

    fn write_final(&mut self) {
        let Some(store) = &self.store else { return };
        let mut text = serde_json::to_string_pretty(&self.report()).expect("report is JSON");
        text.push('\n');
        let mut result = store.write_file(checkpoint::RESULT, &text);
        if let SolverState::Tmcmc(t) = &self.state.solver {
            let mut csv = self.names.join(",");
            csv.push_str(",log_likelihood,log_prior\n");
            for (x, d) in t.samples().iter().zip(t.terms()) {
                let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                csv.push_str(&format!("{},{},{}\n", row.join(","), d.data, d.prior));
            }
            result = result.and(store.write_file(checkpoint::SAMPLES, &csv));
        }
        if let Err(e) = result {
            log::error!("experiment '{}': {e}", self.state.name);
            self.error.get_or_insert(e.to_string());
        }
    }

    fn store_generation(&mut self) -> Result<(), EngineError> {
        let summary = self.state.solver.summary();
        self.trajectory.push(GenerationRecord {
            generation: self.state.generation,
            best_value: summary.best_value.map(|v| v.value()),
            best_params: summary.best_params.clone(),
        });
        let Some(store) = &self.store else { return Ok(()) };
        let index = self.state.generation - 1;
        store.save_checkpoint(&self.state)?;
        let header = format!(
            "generation,evaluations,best_value,annealing_exponent,log_evidence,{}",
            self.names.join(",")
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let params: Vec<String> = if summary.best_params.is_empty() {
            vec![String::new(); self.names.len()]
        } else {
            summary.best_params.iter().map(|v| v.to_string()).collect()
        };
        let row = format!(
            "{index},{},{},{},{},{}",
            self.state.evaluations,
            summary.best_value.map_or(String::new(), |v| v.to_string()),
            opt(summary.annealing_exponent),
            opt(summary.log_evidence),
            params.join(",")
        );
        store.append_summary(&header, &row)?;
        if let Some(t) = self.generation_started {
            store.append_timing(index, t.elapsed().as_secs_f64())?;
        }
        Ok(())
    }
}

impl Participant for Experiment {
    fn experiment_id(&self) -> ExperimentId {
        self.id
    }

    fn binding(&self) -> ModelBinding {
        self.binding.clone()
    }

    fn variable_names(&self) -> Arc<Vec<String>> {
        self.names.clone()
    }

    fn next_batch(&mut self) -> Option<Batch> {
        if self.error.is_some() || self.state.status == Status::Finished {
            return None;
        }
        self.started.get_or_insert_with(Instant::now);
        if let Some(reason) = self.termination_reason() {
            self.finish(reason);
            return None;
        }
        if self.stint == Some(0) {
            self.write_final();
            return None;
        }
        self.state.status = Status::Running;
        match self.state.solver.generate(&self.settings.space) {
            Ok(candidates) => {
                self.generation_started = Some(Instant::now());
                self.in_flight = Some(candidates.clone());
                Some(Batch {
                    first_id: SampleId(self.state.next_sample_id),
                    params: candidates,
                })
            }
            Err(e) => {
                self.abort(e);
                None
            }
        }
    }

    fn complete_batch(&mut self, outcomes: Vec<SampleOutcome>) {
        let candidates = self.in_flight.take().expect("a batch is in flight");
        let mut derived = Vec::with_capacity(outcomes.len());
        for (x, outcome) in candidates.iter().zip(outcomes) {
            match outcome {
                SampleOutcome::Completed(result) => {
                    match derive_quantity(&self.settings.problem.kind, x, &result, &self.settings.space) {
                        Ok(d) => derived.push(d),
                        Err(e) => return self.abort(e),
                    }
                }
                SampleOutcome::Failed(reason) => {
                    log::warn!("experiment '{}': sample failed: {reason}", self.state.name);
                    derived.push(Derived::FAILED);
                }
            }
        }
        if let Err(e) = self.state.solver.update(&candidates, &derived) {
            return self.abort(e);
        }
        let n = candidates.len() as u64;
        self.state.generation = self.state.solver.generation();
        self.state.evaluations += n;
        self.state.next_sample_id += n;
        if let Some(s) = &mut self.stint {
            *s = s.saturating_sub(1);
        }
        if let Err(e) = self.store_generation() {
            self.abort(e);
        }
    }
}

/// Runs experiments to completion (or to the end of their stint) on one
/// shared pool.
pub struct Engine<B: Backend> {
    conduit: Conduit<B>,
    next_id: u32,
}

impl<B: Backend> Engine<B> {
    pub fn new(conduit: Conduit<B>) -> Self {
        Engine { conduit, next_id: 0 }
    }

    pub fn conduit(&self) -> &Conduit<B> {
        &self.conduit
    }

    pub fn conduit_mut(&mut self) -> &mut Conduit<B> {
        &mut self.conduit
    }

    pub fn into_conduit(self) -> Conduit<B> {
        self.conduit
    }

    /// Experiments get consecutive ids, continuing across calls.
    pub fn run(&mut self, experiments: &mut [Experiment]) {
        for e in experiments.iter_mut() {
            e.id = ExperimentId(self.next_id);
            self.next_id += 1;
        }
        let mut refs: Vec<&mut dyn Participant> = experiments
            .iter_mut()
            .map(|e| e as &mut dyn Participant)
            .collect();
        interleave(&mut self.conduit, &mut refs);
    }
}

/// Outcome of [`self_check`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelfCheck {
    /// Replaying the checkpointed generation reproduced it byte for byte.
    Identical,
    Diverged { generation_index: u64 },
}

/// Replays the generation stored at `checkpoint` from its predecessor (or
/// from the configuration for the first one) and compares the resulting
/// state bytes.
pub fn self_check<B: Backend>(
    checkpoint_path: &Path,
    binding: Option<ModelBinding>,
    conduit: &mut Conduit<B>,
) -> Result<SelfCheck, EngineError> {
    let file = checkpoint::resolve_checkpoint(checkpoint_path)?;
    let bytes = std::fs::read(&file).map_err(|e| EngineError::Io(format!("{}: {e}", file.display())))?;
    let target = checkpoint::decode(&bytes)?;
    let settings = ExperimentSettings::from_tree(&target.config)?;
    let binding = match binding {
        Some(b) => b,
        None => settings
            .problem
            .model
            .clone()
            .map(ModelBinding::Concurrent)
            .ok_or_else(|| EngineError::NoModel(target.name.clone()))?,
    };
    let index = target
        .generation
        .checked_sub(1)
        .ok_or_else(|| EngineError::CorruptCheckpoint("checkpoint before any generation".into()))?;
    let replay = match index.checked_sub(1) {
        Some(prev) => {
            let dir: PathBuf = file.parent().unwrap_or(Path::new(".")).to_path_buf();
            let prev_state = checkpoint::load(&dir.join(checkpoint::checkpoint_name(prev)))?;
            Experiment::from_state(prev_state, binding)?
        }
        None => Experiment::new(target.name.clone(), settings, binding)?,
    };
    let mut replay = replay.with_stint(1);
    interleave(conduit, &mut [&mut replay]);
    if let Some(e) = replay.error {
        return Err(EngineError::Io(format!("replay failed: {e}")));
    }
    // checkpoints are taken before termination is evaluated
    let mut replayed = replay.state;
    replayed.status = Status::Running;
    replayed.termination = None;
    replayed.warning = None;
    Ok(if checkpoint::encode(&replayed) == bytes {
        SelfCheck::Identical
    } else {
        SelfCheck::Diverged { generation_index: index }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conduit::backend::sim::SimBackend;
    use crate::conduit::Sample;
    use serde_json::Value;

    fn parabola() -> ModelBinding {
        ModelBinding::in_process(|s: &mut Sample| {
            let x = s["X"];
            s.set("F(x)", -(x - 1.0) * (x - 1.0));
        })
    }

    fn cmaes(extra: Value) -> ExperimentSettings {
        let mut v = json!({
            "Random Seed": 3,
            "Problem": {"Type": "Optimization"},
            "Variables": [{"Name": "X", "Lower Bound": -5.0, "Upper Bound": 5.0}],
            "Solver": {"Type": "CMAES", "Population Size": 8, "Max Generations": 10}
        });
        if let (Value::Object(base), Value::Object(extra)) = (&mut v, extra) {
            base.extend(extra);
        }
        ExperimentSettings::from_tree(&ConfigTree::from_value(v).unwrap()).unwrap()
    }

    fn conduit() -> Conduit<SimBackend> {
        Conduit::new(SimBackend::fixed(3, 10)).unwrap()
    }

    fn run(experiments: &mut [Experiment]) {
        Engine::new(conduit()).run(experiments);
    }

    #[test]
    fn ten_generations_of_eight() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::new("a", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap();
        let mut exps = [exp];
        run(&mut exps);
        let e = &exps[0];
        assert_eq!(e.state().evaluations, 80);
        assert_eq!(e.state().generation, 10);
        assert_eq!(e.state().termination, Some(TerminationReason::MaxGenerations));
        let out = dir.path().join("a");
        for g in 0..10 {
            assert!(out.join(checkpoint::checkpoint_name(g)).exists());
        }
        assert!(!out.join(checkpoint::checkpoint_name(10)).exists());
        assert_eq!(std::fs::read_to_string(out.join("latest")).unwrap().trim(), "gen00009.state");
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 11);
        assert!(summary.starts_with("generation,evaluations,best_value"));
        let result: Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
        assert_eq!(result["evaluations"], 80);
        assert_eq!(result["termination"], "MaxGenerations");
    }

    #[test]
    fn zero_generations_means_zero_evaluations() {
        let mut settings = cmaes(json!({}));
        settings.config.set("Solver/Max Generations", 0);
        let settings = ExperimentSettings::from_tree(&settings.config).unwrap();
        let mut exps = [Experiment::new("z", settings, parabola()).unwrap()];
        run(&mut exps);
        assert_eq!(exps[0].state().evaluations, 0);
        assert!(exps[0].is_finished());
    }

    #[test]
    fn evaluation_cap_stops_before_overshooting() {
        let settings = cmaes(json!({"Termination Criteria": {"Max Model Evaluations": 100}}));
        let mut settings_tree = settings.config.clone();
        settings_tree.set("Solver/Max Generations", 1000);
        let settings = ExperimentSettings::from_tree(&settings_tree).unwrap();
        let mut exps = [Experiment::new("cap", settings, parabola()).unwrap()];
        run(&mut exps);
        assert_eq!(exps[0].state().evaluations, 96);
        assert_eq!(exps[0].state().termination, Some(TerminationReason::MaxModelEvaluations));
    }

    #[test]
    fn retention_keeps_the_newest_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let settings = cmaes(json!({"File Output": {"Keep Checkpoints": 3}}));
        let mut exps = [Experiment::new("k", settings, parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let out = dir.path().join("k");
        let kept: Vec<bool> = (0..10).map(|g| out.join(checkpoint::checkpoint_name(g)).exists()).collect();
        assert_eq!(kept, [vec![false; 7], vec![true; 3]].concat());
    }

    #[test]
    fn checkpoint_round_trips_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("rt", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let path = dir.path().join("rt").join("gen00004.state");
        let bytes = std::fs::read(&path).unwrap();
        let state = checkpoint::decode(&bytes).unwrap();
        assert_eq!(checkpoint::encode(&state), bytes);
        assert_eq!(state.generation, 5);
    }

    #[test]
    fn damaged_checkpoints_are_rejected() {
        let state = Experiment::new("d", cmaes(json!({})), parabola()).unwrap().state;
        let bytes = checkpoint::encode(&state);
        let truncated = &bytes[..bytes.len() - 7];
        assert!(matches!(checkpoint::decode(truncated), Err(EngineError::CorruptCheckpoint(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 2;
        flipped[last] ^= 1;
        assert!(matches!(checkpoint::decode(&flipped), Err(EngineError::CorruptCheckpoint(_))));
        let text = String::from_utf8(bytes).unwrap();
        let newer = text.replacen("UQCKPT 1 ", "UQCKPT 2 ", 1);
        assert_eq!(
            checkpoint::decode(newer.as_bytes()),
            Err(EngineError::VersionMismatch { found: 2, expected: 1 })
        );
        assert!(matches!(checkpoint::decode(b""), Err(EngineError::CorruptCheckpoint(_))));
    }

    #[test]
    fn interrupted_write_leaves_latest_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("i", cmaes(json!({})), parabola())
            .unwrap()
            .with_stint(3)
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let out = dir.path().join("i");
        // a crash mid-write leaves only a partial temporary file behind
        let full = checkpoint::encode(exps[0].state());
        std::fs::write(out.join("gen00003.state.tmp"), &full[..full.len() / 2]).unwrap();
        let resumed = Experiment::resume(&out, Some(parabola())).unwrap();
        assert_eq!(resumed.state().generation, 3);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let straight_dir = dir.path().join("straight");
        let mut straight = [Experiment::new("e", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(&straight_dir)
            .unwrap()];
        run(&mut straight);

        let split_dir = dir.path().join("split");
        let mut first = [Experiment::new("e", cmaes(json!({})), parabola())
            .unwrap()
            .with_stint(4)
            .with_output(&split_dir)
            .unwrap()];
        run(&mut first);
        assert!(!first[0].is_finished());
        assert_eq!(first[0].state().generation, 4);
        let mut second = [Experiment::resume(&split_dir.join("e"), Some(parabola())).unwrap()];
        run(&mut second);

        assert_eq!(second[0].state(), straight[0].state());
        for g in 0..10 {
            let name = checkpoint::checkpoint_name(g);
            assert_eq!(
                std::fs::read(straight_dir.join("e").join(&name)).unwrap(),
                std::fs::read(split_dir.join("e").join(&name)).unwrap(),
                "{name}"
            );
        }
        let rows = |d: &Path| {
            let text = std::fs::read_to_string(d.join("e").join("summary.csv")).unwrap();
            text.lines().map(|l| l.split(',').skip(1).collect::<Vec<_>>().join(",")).collect::<Vec<_>>()
        };
        assert_eq!(rows(&straight_dir), rows(&split_dir));
    }

    #[test]
    fn resume_drops_log_rows_past_the_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("t", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let out = dir.path().join("t");
        let mut e = Experiment::resume(&out.join("gen00005.state"), Some(parabola())).unwrap();
        assert_eq!(e.state().generation, 6);
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 7);
        let mut exps = [e.with_stint(1)];
        run(&mut exps);
        e = exps.into_iter().next().unwrap();
        assert_eq!(e.state().generation, 7);
    }

    #[test]
    fn extension_runs_past_the_generation_cap() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("x", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let mut e = Experiment::resume(&dir.path().join("x"), Some(parabola())).unwrap();
        e.extend_generations(5).unwrap();
        let mut exps = [e];
        run(&mut exps);
        assert_eq!(exps[0].state().generation, 15);
        assert_eq!(exps[0].state().evaluations, 120);
    }

    #[test]
    fn self_check_reproduces_a_generation() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("s", cmaes(json!({})), parabola())
            .unwrap()
            .with_output(dir.path())
            .unwrap()];
        run(&mut exps);
        let out = dir.path().join("s");
        let mut c = conduit();
        assert_eq!(self_check(&out, Some(parabola()), &mut c).unwrap(), SelfCheck::Identical);
        assert_eq!(
            self_check(&out.join("gen00000.state"), Some(parabola()), &mut c).unwrap(),
            SelfCheck::Identical
        );
        // a different model cannot reproduce the stored generation
        let other = ModelBinding::in_process(|s: &mut Sample| {
            let x = s["X"];
            s.set("F(x)", -x * x);
        });
        assert_eq!(
            self_check(&out.join("gen00003.state"), Some(other), &mut c).unwrap(),
            SelfCheck::Diverged { generation_index: 3 }
        );
    }

    #[test]
    fn experiments_write_to_separate_directories() {
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [
            Experiment::new("one", cmaes(json!({})), parabola()).unwrap().with_output(dir.path()).unwrap(),
            Experiment::new("two", cmaes(json!({"Random Seed": 4})), parabola())
                .unwrap()
                .with_output(dir.path())
                .unwrap(),
        ];
        run(&mut exps);
        for name in ["one", "two"] {
            assert!(dir.path().join(name).join("gen00009.state").exists());
        }
        assert_ne!(exps[0].state().solver, exps[1].state().solver);
    }

    #[test]
    fn missing_result_key_aborts_only_that_experiment() {
        let broken = ModelBinding::in_process(|s: &mut Sample| s.set("Wrong", 1.0));
        let mut exps = [
            Experiment::new("bad", cmaes(json!({})), broken).unwrap(),
            Experiment::new("good", cmaes(json!({})), parabola()).unwrap(),
        ];
        run(&mut exps);
        assert!(exps[0].error().is_some_and(|e| e.contains("F(x)")), "{:?}", exps[0].error());
        assert_eq!(exps[0].state().evaluations, 0);
        assert_eq!(exps[1].state().evaluations, 80);
        assert!(exps[1].error().is_none());
    }

    #[test]
    fn failed_samples_count_as_rejected() {
        let flaky = ModelBinding::in_process(|s: &mut Sample| {
            let x = s["X"];
            if x > 0.5 {
                panic!("model blew up");
            }
            s.set("F(x)", -x * x);
        });
        let mut exps = [Experiment::new("f", cmaes(json!({})), flaky).unwrap()];
        run(&mut exps);
        assert!(exps[0].error().is_none());
        assert_eq!(exps[0].state().evaluations, 80);
        let best = exps[0].trajectory().last().unwrap().best_params[0];
        assert!(best <= 0.5);
    }

    #[test]
    fn tmcmc_generation_cap_warns() {
        let v = json!({
            "Random Seed": 1,
            "Problem": {"Type": "Bayesian Inference", "Reference Data": [0.3, 0.1, -0.2]},
            "Variables": [
                {"Name": "Mu", "Prior Distribution": "P"},
                {"Name": "Sigma", "Prior Distribution": "S"}
            ],
            "Distributions": [
                {"Name": "P", "Type": "Univariate/Normal", "Mean": 0.0, "Sigma": 1.0},
                {"Name": "S", "Type": "Univariate/Uniform", "Minimum": 0.5, "Maximum": 1.5}
            ],
            "Solver": {"Type": "TMCMC", "Population Size": 200, "Max Generations": 1}
        });
        let settings = ExperimentSettings::from_tree(&ConfigTree::from_value(v).unwrap()).unwrap();
        let model = ModelBinding::in_process(|s: &mut Sample| {
            let mu = s["Mu"];
            s.set("Reference Evaluations", vec![mu; 3]);
        });
        let dir = tempfile::tempdir().unwrap();
        let mut exps = [Experiment::new("b", settings, model).unwrap().with_output(dir.path()).unwrap()];
        run(&mut exps);
        let e = &exps[0];
        assert_eq!(e.state().termination, Some(TerminationReason::MaxGenerations));
        assert!(e.state().warning.as_deref().is_some_and(|w| w.contains("annealing")));
        let samples = std::fs::read_to_string(dir.path().join("b").join("samples.csv")).unwrap();
        assert_eq!(samples.lines().next(), Some("Mu,Sigma,log_likelihood,log_prior"));
        assert_eq!(samples.lines().count(), 201);
    }

    #[test]
    fn from_settings_needs_a_model() {
        assert_eq!(
            Experiment::from_settings("m", cmaes(json!({}))).err(),
            Some(EngineError::NoModel("m".into()))
        );
    }
}
