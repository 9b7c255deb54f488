use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::Instant;

use super::{execute, Backend, Completion};
use crate::conduit::{Job, WorkerId};

/// One OS thread per worker, for in-process and external models alike.
pub struct ThreadBackend {
    origin: Instant,
    senders: Vec<Sender<Job>>,
    completions: Receiver<Completion>,
    handles: Vec<JoinHandle<()>>,
}

impl ThreadBackend {
    pub fn new(workers: usize) -> Self {
        let origin = Instant::now();
        let (done_tx, done_rx) = channel();
        let mut senders = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = channel::<Job>();
            let done = done_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("worker-{w}"))
                .spawn(move || {
                    let id = WorkerId(w);
                    for job in rx {
                        let started = origin.elapsed().as_nanos() as u64;
                        let outcome = execute(&job, id);
                        let finished = origin.elapsed().as_nanos() as u64;
                        let c = Completion {
                            worker: id,
                            key: job.key,
                            outcome,
                            started,
                            finished,
                        };
                        if done.send(c).is_err() {
                            break;
                        }
                    }
                })
                .expect("spawn worker thread");
            senders.push(tx);
            handles.push(handle);
        }
        ThreadBackend {
            origin,
            senders,
            completions: done_rx,
            handles,
        }
    }
}

impl Backend for ThreadBackend {
    fn worker_count(&self) -> usize {
        self.senders.len()
    }

    fn now(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn launch(&mut self, worker: WorkerId, job: Job) {
        self.senders[worker.0]
            .send(job)
            .expect("worker thread is alive");
    }

    fn wait(&mut self) -> Vec<Completion> {
        let first = self
            .completions
            .recv()
            .expect("worker threads outlive the backend");
        let mut out = vec![first];
        out.extend(self.completions.try_iter());
        out
    }
}

impl Drop for ThreadBackend {
    fn drop(&mut self) {
        self.senders.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
