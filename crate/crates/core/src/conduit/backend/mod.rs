//! Executors behind the conduit.

pub mod process;
pub mod sim;
pub mod thread;

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

use super::concurrent::run_concurrent_model;
use super::{Job, ModelBinding, SampleKey, WorkerId};
use crate::problem::SampleResult;

pub use process::ProcessBackend;
pub use sim::SimBackend;
pub use thread::ThreadBackend;

/// What a worker reports for one job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Completed(SampleResult),
    /// The model ran and reported an error; the sample is failed for good.
    Failed(String),
    /// The worker died or the model was killed; the sample may be retried.
    Crashed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub worker: WorkerId,
    pub key: SampleKey,
    pub outcome: Outcome,
    /// Backend clock, nanoseconds.
    pub started: u64,
    pub finished: u64,
}

pub trait Backend {
    fn worker_count(&self) -> usize;

    /// Nanoseconds since the backend started.
    fn now(&self) -> u64;

    /// Starts `job` on an idle worker.
    fn launch(&mut self, worker: WorkerId, job: Job);

    /// Blocks until at least one launched job has finished and returns
    /// every finished job. Only called while some job is outstanding.
    fn wait(&mut self) -> Vec<Completion>;
}

/// Evaluates a job on the calling thread. Panics in in-process models are
/// reported as crashes.
pub fn execute(job: &Job, worker: WorkerId) -> Outcome {
    match &job.binding {
        ModelBinding::InProcess(f) => {
            let mut sample = job.sample();
            match catch_unwind(AssertUnwindSafe(|| f(&mut sample))) {
                Ok(()) => Outcome::Completed(sample.into_result()),
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "model panicked".into());
                    Outcome::Crashed(msg)
                }
            }
        }
        ModelBinding::Concurrent(model) => {
            match run_concurrent_model(model, &job.names, &job.params, job.key, worker) {
                Ok(result) => Outcome::Completed(result),
                Err(e) if e.is_crash() => Outcome::Crashed(e.to_string()),
                Err(e) => Outcome::Failed(e.to_string()),
            }
        }
    }
}
