//! Discrete-event executor with an integer nanosecond clock.
//!
//! Models are still evaluated (in-process closures run immediately), but the
//! time they take comes from a duration function, and nothing sleeps. Events
//! finishing at the same instant are delivered together in worker order, so
//! a run is a pure function of its inputs.

use super::{execute, Backend, Completion, Outcome};
use crate::conduit::{Job, WorkerId};
use crate::rng::RngStream;

pub type DurationFn = Box<dyn FnMut(&Job) -> u64 + Send>;

struct Running {
    completion: Completion,
    observed: u64,
}

pub struct SimBackend {
    clock: u64,
    duration: DurationFn,
    poll_interval: u64,
    crash_rate: f64,
    rng: RngStream,
    running: Vec<Option<Running>>,
}

impl SimBackend {
    pub fn new(workers: usize, duration: impl FnMut(&Job) -> u64 + Send + 'static, seed: u64) -> Self {
        SimBackend {
            clock: 0,
            duration: Box::new(duration),
            poll_interval: 0,
            crash_rate: 0.0,
            rng: RngStream::new(seed, "conduit"),
            running: (0..workers).map(|_| None).collect(),
        }
    }

    /// Every job takes `nanos`.
    pub fn fixed(workers: usize, nanos: u64) -> Self {
        Self::new(workers, move |_| nanos, 0)
    }

    /// Fraction of jobs whose worker dies instead of reporting.
    pub fn with_crash_rate(mut self, rate: f64) -> Self {
        self.crash_rate = rate;
        self
    }

    /// Completions are noticed only at multiples of `nanos` (0 = at once).
    pub fn with_poll_interval(mut self, nanos: u64) -> Self {
        self.poll_interval = nanos;
        self
    }
}

impl Backend for SimBackend {
    fn worker_count(&self) -> usize {
        self.running.len()
    }

    fn now(&self) -> u64 {
        self.clock
    }

    fn launch(&mut self, worker: WorkerId, job: Job) {
        debug_assert!(self.running[worker.0].is_none());
        let started = self.clock;
        let finished = started + (self.duration)(&job);
        let crashed = self.crash_rate > 0.0 && self.rng.uniform() < self.crash_rate;
        let outcome = if crashed {
            Outcome::Crashed("simulated worker crash".into())
        } else {
            execute(&job, worker)
        };
        let observed = match self.poll_interval {
            0 => finished,
            p => finished.div_ceil(p) * p,
        };
        self.running[worker.0] = Some(Running {
            completion: Completion {
                worker,
                key: job.key,
                outcome,
                started,
                finished,
            },
            observed,
        });
    }

    fn wait(&mut self) -> Vec<Completion> {
        let Some(next) = self
            .running
            .iter()
            .flatten()
            .map(|r| r.observed)
            .min()
        else {
            return Vec::new();
        };
        self.clock = self.clock.max(next);
        let mut out = Vec::new();
        for slot in &mut self.running {
            if slot.as_ref().is_some_and(|r| r.observed == next) {
                out.push(slot.take().unwrap().completion);
            }
        }
        out
    }
}
