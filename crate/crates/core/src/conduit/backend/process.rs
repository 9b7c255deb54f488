//! One child process per worker, speaking framed messages over its standard
//! streams. A worker that dies is replaced and its sample reported crashed.

use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Instant;

use super::{execute, Backend, Completion, Outcome};
use crate::conduit::transport::{read_message, write_message, JobSpec, Message};
use crate::conduit::{ConduitError, Job, ModelBinding, SampleKey, WorkerId};

enum Event {
    Message(usize, u64, Message),
    Closed(usize, u64, String),
}

struct Slot {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    incarnation: u64,
    running: Option<(SampleKey, u64)>,
}

pub struct ProcessBackend {
    exe: PathBuf,
    origin: Instant,
    slots: Vec<Slot>,
    events: Receiver<Event>,
    events_tx: Sender<Event>,
    ready: Vec<Completion>,
    respawns: u64,
}

fn spawn(exe: &Path, worker: usize, incarnation: u64, tx: Sender<Event>) -> io::Result<Slot> {
    let mut child = Command::new(exe)
        .arg("worker")
        .arg("--id")
        .arg(worker.to_string())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()?;
    let stdin = BufWriter::new(child.stdin.take().expect("stdin is piped"));
    let stdout = child.stdout.take().expect("stdout is piped");
    std::thread::spawn(move || {
        let mut r = BufReader::new(stdout);
        loop {
            match read_message(&mut r) {
                Ok(Some(msg)) => {
                    if tx.send(Event::Message(worker, incarnation, msg)).is_err() {
                        return;
                    }
                }
                Ok(None) => {
                    let _ = tx.send(Event::Closed(worker, incarnation, "worker exited".into()));
                    return;
                }
                Err(e) => {
                    let _ = tx.send(Event::Closed(worker, incarnation, e.to_string()));
                    return;
                }
            }
        }
    });
    Ok(Slot {
        child,
        stdin,
        incarnation,
        running: None,
    })
}

impl ProcessBackend {
    /// Starts `workers` copies of `exe worker --id <i>`.
    pub fn new(workers: usize, exe: impl Into<PathBuf>) -> Result<Self, ConduitError> {
        let exe = exe.into();
        let (tx, rx) = channel();
        let mut slots = Vec::with_capacity(workers);
        for w in 0..workers {
            slots.push(
                spawn(&exe, w, 0, tx.clone())
                    .map_err(|e| ConduitError::SpawnFailure(w, e.to_string()))?,
            );
        }
        Ok(ProcessBackend {
            exe,
            origin: Instant::now(),
            slots,
            events: rx,
            events_tx: tx,
            ready: Vec::new(),
            respawns: 0,
        })
    }

    pub fn worker_pids(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.child.id()).collect()
    }

    /// Number of worker processes replaced after dying.
    pub fn respawns(&self) -> u64 {
        self.respawns
    }

    fn crash(&mut self, w: usize, reason: String) {
        let now = self.now();
        let slot = &mut self.slots[w];
        let _ = slot.child.kill();
        let _ = slot.child.wait();
        if let Some((key, started)) = slot.running.take() {
            self.ready.push(Completion {
                worker: WorkerId(w),
                key,
                outcome: Outcome::Crashed(reason),
                started,
                finished: now,
            });
        }
        let incarnation = slot.incarnation + 1;
        self.slots[w] = spawn(&self.exe, w, incarnation, self.events_tx.clone())
            .unwrap_or_else(|e| panic!("cannot restart worker {w}: {e}"));
        self.respawns += 1;
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Message(w, inc, Message::Result { key, outcome }) => {
                let slot = &mut self.slots[w];
                if inc != slot.incarnation || slot.running.map(|r| r.0) != Some(key) {
                    return;
                }
                let (_, started) = slot.running.take().expect("checked above");
                self.ready.push(Completion {
                    worker: WorkerId(w),
                    key,
                    outcome,
                    started,
                    finished: self.origin.elapsed().as_nanos() as u64,
                });
            }
            Event::Message(..) => {}
            Event::Closed(w, inc, reason) => {
                if inc == self.slots[w].incarnation {
                    self.crash(w, reason);
                }
            }
        }
    }
}

impl Backend for ProcessBackend {
    fn worker_count(&self) -> usize {
        self.slots.len()
    }

    fn now(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn launch(&mut self, worker: WorkerId, job: Job) {
        let now = self.now();
        let ModelBinding::Concurrent(model) = job.binding else {
            self.ready.push(Completion {
                worker,
                key: job.key,
                outcome: Outcome::Failed("in-process models cannot run in worker processes".into()),
                started: now,
                finished: now,
            });
            return;
        };
        let msg = Message::Job(JobSpec {
            key: job.key,
            names: job.names.to_vec(),
            params: job.params,
            model,
        });
        let slot = &mut self.slots[worker.0];
        slot.running = Some((job.key, now));
        if let Err(e) = write_message(&mut slot.stdin, &msg) {
            self.crash(worker.0, e.to_string());
        }
    }

    fn wait(&mut self) -> Vec<Completion> {
        while self.ready.is_empty() {
            let event = self.events.recv().expect("backend holds a sender");
            self.handle(event);
        }
        while let Ok(event) = self.events.try_recv() {
            self.handle(event);
        }
        std::mem::take(&mut self.ready)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        for slot in &mut self.slots {
            let _ = write_message(&mut slot.stdin, &Message::Shutdown);
        }
        for slot in &mut self.slots {
            let deadline = Instant::now() + std::time::Duration::from_secs(2);
            loop {
                match slot.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        std::thread::sleep(std::time::Duration::from_millis(5))
                    }
                    _ => {
                        let _ = slot.child.kill();
                        let _ = slot.child.wait();
                        break;
                    }
                }
            }
        }
    }
}

/// Body of a worker process: evaluate jobs until told to stop.
pub fn worker_main(id: usize) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut input = BufReader::new(stdin.lock());
    let mut output = BufWriter::new(stdout.lock());
    loop {
        let msg = read_message(&mut input).map_err(|e| io::Error::other(e.to_string()))?;
        match msg {
            Some(Message::Job(spec)) => {
                let job = Job {
                    key: spec.key,
                    names: std::sync::Arc::new(spec.names),
                    params: spec.params,
                    binding: ModelBinding::Concurrent(spec.model),
                };
                let outcome = execute(&job, WorkerId(id));
                write_message(
                    &mut output,
                    &Message::Result {
                        key: job.key,
                        outcome,
                    },
                )
                .map_err(|e| io::Error::other(e.to_string()))?;
            }
            Some(Message::Shutdown) | None => return Ok(()),
            Some(Message::Result { .. }) => {
                return Err(io::Error::other("worker received a result frame"));
            }
        }
    }
}
