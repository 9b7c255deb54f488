//! Distribution of samples from one or more experiments to a shared pool of
//! workers.
//!
//! The [`Conduit`] owns one FIFO queue that every experiment submits to and
//! a table of [`WorkerHandle`]s. Execution itself is delegated to a
//! [`Backend`]: threads, worker processes, or a discrete-event simulation.
//! All bookkeeping happens on the caller's thread.

pub mod backend;
pub mod concurrent;
mod interleave;
pub mod transport;
mod worker;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelSettings;
use crate::problem::SampleResult;

pub use backend::{Backend, Completion, Outcome};
pub use interleave::{interleave, Batch, Participant};
pub use worker::{validate_transition_log, BusyInterval, WorkerHandle, WorkerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExperimentId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub u64);

/// Globally unique tag of a sample in flight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub experiment: ExperimentId,
    pub sample: SampleId,
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}/s{}", self.experiment.0, self.sample.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConduitError {
    #[error("experiment {0:?} is not registered")]
    UnknownExperiment(ExperimentId),
    #[error("could not start worker {0}: {1}")]
    SpawnFailure(usize, String),
    #[error("a pool needs at least one worker")]
    NoWorkers,
    #[error("team size must be at least 1")]
    InvalidTeamSize,
    #[error("worker {worker:?}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        worker: WorkerId,
        from: WorkerState,
        to: WorkerState,
    },
}

/// Worker teams available when `ranks` processes are split into teams of
/// `team_size`, one rank being reserved for the engine.
pub fn teams_for_ranks(ranks: usize, team_size: usize) -> Result<usize, ConduitError> {
    if team_size == 0 {
        return Err(ConduitError::InvalidTeamSize);
    }
    match ranks.saturating_sub(1) / team_size {
        0 => Err(ConduitError::NoWorkers),
        k => Ok(k),
    }
}

/// A parameter vector handed to an in-process model, which writes its
/// outputs with [`Sample::set`].
#[derive(Clone, Debug)]
pub struct Sample {
    pub key: SampleKey,
    names: Arc<Vec<String>>,
    params: Vec<f64>,
    result: SampleResult,
}

impl Sample {
    pub fn new(key: SampleKey, names: Arc<Vec<String>>, params: Vec<f64>) -> Self {
        Sample {
            key,
            names,
            params,
            result: SampleResult::new(),
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.params[i])
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<crate::problem::ResultValue>) {
        self.result.set(key, value);
    }

    pub fn result(&self) -> &SampleResult {
        &self.result
    }

    pub fn into_result(self) -> SampleResult {
        self.result
    }
}

impl std::ops::Index<&str> for Sample {
    type Output = f64;

    fn index(&self, name: &str) -> &f64 {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("sample has no variable '{name}'"));
        &self.params[i]
    }
}

pub type ModelFn = dyn Fn(&mut Sample) + Send + Sync;

/// How the samples of one experiment are evaluated.
#[derive(Clone)]
pub enum ModelBinding {
    InProcess(Arc<ModelFn>),
    Concurrent(ModelSettings),
}

impl ModelBinding {
    pub fn in_process(f: impl Fn(&mut Sample) + Send + Sync + 'static) -> Self {
        ModelBinding::InProcess(Arc::new(f))
    }
}

impl fmt::Debug for ModelBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelBinding::InProcess(_) => f.write_str("InProcess(..)"),
            ModelBinding::Concurrent(m) => f.debug_tuple("Concurrent").field(&m.command).finish(),
        }
    }
}

/// One unit of work for a backend.
#[derive(Clone, Debug)]
pub struct Job {
    pub key: SampleKey,
    pub names: Arc<Vec<String>>,
    pub params: Vec<f64>,
    pub binding: ModelBinding,
}

impl Job {
    pub fn sample(&self) -> Sample {
        Sample::new(self.key, self.names.clone(), self.params.clone())
    }
}

/// Final disposition of a submitted sample, reported exactly once.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleOutcome {
    Completed(SampleResult),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finished {
    pub key: SampleKey,
    pub outcome: SampleOutcome,
}

#[derive(Clone, Debug)]
struct Queued {
    key: SampleKey,
    names: Arc<Vec<String>>,
    params: Vec<f64>,
}

/// Counters over the lifetime of a conduit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConduitStats {
    pub submitted: u64,
    pub completed: u64,
    pub failed: u64,
    pub crashes: u64,
    pub requeued: u64,
}

pub struct Conduit<B: Backend> {
    backend: B,
    workers: Vec<WorkerHandle>,
    queue: VecDeque<Queued>,
    bindings: BTreeMap<ExperimentId, ModelBinding>,
    crashes: HashMap<SampleKey, u32>,
    running: Vec<Option<Queued>>,
    assignments: Vec<(WorkerId, SampleKey)>,
    record_assignments: bool,
    stats: ConduitStats,
}

impl<B: Backend> Conduit<B> {
    pub fn new(backend: B) -> Result<Self, ConduitError> {
        Self::with_team_size(backend, 1)
    }

    pub fn with_team_size(backend: B, team_size: usize) -> Result<Self, ConduitError> {
        if team_size == 0 {
            return Err(ConduitError::InvalidTeamSize);
        }
        let k = backend.worker_count();
        if k == 0 {
            return Err(ConduitError::NoWorkers);
        }
        Ok(Conduit {
            workers: (0..k)
                .map(|i| WorkerHandle::new(WorkerId(i), team_size))
                .collect(),
            running: vec![None; k],
            backend,
            queue: VecDeque::new(),
            bindings: BTreeMap::new(),
            crashes: HashMap::new(),
            assignments: Vec::new(),
            record_assignments: false,
            stats: ConduitStats::default(),
        })
    }

    /// Keep the sequence of (worker, sample) assignments for inspection.
    pub fn record_assignments(&mut self, on: bool) {
        self.record_assignments = on;
    }

    pub fn assignments(&self) -> &[(WorkerId, SampleKey)] {
        &self.assignments
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn workers(&self) -> &[WorkerHandle] {
        &self.workers
    }

    pub fn stats(&self) -> ConduitStats {
        self.stats
    }

    pub fn now(&self) -> u64 {
        self.backend.now()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn idle_count(&self) -> usize {
        self.workers
            .iter()
            .filter(|w| w.state() == WorkerState::Idle)
            .count()
    }

    pub fn busy_count(&self) -> usize {
        self.workers.len() - self.idle_count()
    }

    /// Samples queued or executing.
    pub fn in_flight(&self) -> usize {
        self.queue.len() + self.busy_count()
    }

    pub fn register(&mut self, experiment: ExperimentId, binding: ModelBinding) {
        self.bindings.insert(experiment, binding);
    }

    pub fn unregister(&mut self, experiment: ExperimentId) {
        self.bindings.remove(&experiment);
    }

    /// Appends samples to the shared queue in the given order.
    pub fn submit(
        &mut self,
        experiment: ExperimentId,
        names: Arc<Vec<String>>,
        samples: Vec<(SampleId, Vec<f64>)>,
    ) -> Result<usize, ConduitError> {
        if !self.bindings.contains_key(&experiment) {
            return Err(ConduitError::UnknownExperiment(experiment));
        }
        let count = samples.len();
        for (sample, params) in samples {
            self.queue.push_back(Queued {
                key: SampleKey { experiment, sample },
                names: names.clone(),
                params,
            });
        }
        self.stats.submitted += count as u64;
        Ok(count)
    }

    /// Pairs the queue front with the lowest-id idle worker until either
    /// runs out. Returns the number of assignments.
    pub fn dispatch_step(&mut self) -> usize {
        let mut made = 0;
        while !self.queue.is_empty() {
            let Some(w) = self
                .workers
                .iter()
                .position(|w| w.state() == WorkerState::Idle)
            else {
                break;
            };
            let q = self.queue.pop_front().expect("queue is non-empty");
            let binding = self
                .bindings
                .get(&q.key.experiment)
                .cloned()
                .expect("queued samples belong to registered experiments");
            self.workers[w]
                .assign(q.key)
                .expect("idle worker accepts a sample");
            if self.record_assignments {
                self.assignments.push((WorkerId(w), q.key));
            }
            let job = Job {
                key: q.key,
                names: q.names.clone(),
                params: q.params.clone(),
                binding,
            };
            self.running[w] = Some(q);
            self.backend.launch(WorkerId(w), job);
            made += 1;
        }
        made
    }

    /// Waits for at least one worker to finish (if any is busy), retrieves
    /// every pending result and applies the crash policy. Crashed samples
    /// are re-queued at the front once; a second crash reports them failed.
    pub fn collect(&mut self) -> Vec<Finished> {
        if self.busy_count() == 0 {
            return Vec::new();
        }
        let completions = self.backend.wait();
        let mut requeue = Vec::new();
        let mut out = Vec::new();
        for c in completions {
            let worker = &mut self.workers[c.worker.0];
            worker
                .complete(c.key, c.started, c.finished)
                .expect("busy worker completes its own sample");
            let key = worker.retrieve().expect("pending worker has a result");
            let job = self.running[c.worker.0]
                .take()
                .expect("running sample recorded at dispatch");
            match c.outcome {
                Outcome::Completed(result) => {
                    self.stats.completed += 1;
                    self.crashes.remove(&key);
                    out.push(Finished {
                        key,
                        outcome: SampleOutcome::Completed(result),
                    });
                }
                Outcome::Failed(reason) => {
                    self.stats.failed += 1;
                    self.crashes.remove(&key);
                    out.push(Finished {
                        key,
                        outcome: SampleOutcome::Failed(reason),
                    });
                }
                Outcome::Crashed(reason) => {
                    self.stats.crashes += 1;
                    let count = self.crashes.entry(key).or_insert(0);
                    *count += 1;
                    if *count >= 2 {
                        self.crashes.remove(&key);
                        self.stats.failed += 1;
                        log::warn!("sample {key} crashed twice: {reason}");
                        out.push(Finished {
                            key,
                            outcome: SampleOutcome::Failed(format!("worker crashed twice: {reason}")),
                        });
                    } else {
                        log::info!("sample {key} crashed, re-queueing: {reason}");
                        self.stats.requeued += 1;
                        requeue.push(job);
                    }
                }
            }
        }
        for q in requeue.into_iter().rev() {
            self.queue.push_front(q);
        }
        out
    }

    /// Every busy interval recorded so far, sorted by worker then start.
    pub fn busy_intervals(&self) -> Vec<(WorkerId, BusyInterval)> {
        self.workers
            .iter()
            .flat_map(|w| w.intervals().iter().map(move |i| (w.id(), *i)))
            .collect()
    }

    pub fn clear_intervals(&mut self) {
        for w in &mut self.workers {
            w.clear_intervals();
        }
    }
}
