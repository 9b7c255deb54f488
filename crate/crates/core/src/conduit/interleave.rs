//! Driving several experiments over one pool.
//!
//! Each participant hands out one batch (a generation) at a time. The loop
//! keeps every participant's current batch in the shared queue, and as soon
//! as a batch's last result arrives the participant is updated and asked for
//! its next batch, independently of the others.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Backend, Conduit, ExperimentId, ModelBinding, SampleId, SampleOutcome};

/// One generation's worth of parameter vectors, with consecutive sample ids
/// starting at `first_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub first_id: SampleId,
    pub params: Vec<Vec<f64>>,
}

pub trait Participant {
    fn experiment_id(&self) -> ExperimentId;

    fn binding(&self) -> ModelBinding;

    fn variable_names(&self) -> Arc<Vec<String>>;

    /// The next batch to evaluate, or `None` once the participant is done.
    fn next_batch(&mut self) -> Option<Batch>;

    /// Outcomes of the last batch, in sample-id order.
    fn complete_batch(&mut self, outcomes: Vec<SampleOutcome>);
}

struct Slot {
    first: u64,
    outcomes: Vec<Option<SampleOutcome>>,
    remaining: usize,
}

fn submit_next<B: Backend>(
    conduit: &mut Conduit<B>,
    p: &mut dyn Participant,
    slots: &mut BTreeMap<ExperimentId, Slot>,
) {
    let id = p.experiment_id();
    loop {
        match p.next_batch() {
            None => {
                conduit.unregister(id);
                slots.remove(&id);
                return;
            }
            Some(batch) if batch.params.is_empty() => {
                p.complete_batch(Vec::new());
            }
            Some(batch) => {
                let n = batch.params.len();
                let first = batch.first_id.0;
                let samples = batch
                    .params
                    .into_iter()
                    .enumerate()
                    .map(|(i, x)| (SampleId(first + i as u64), x))
                    .collect();
                conduit
                    .submit(id, p.variable_names(), samples)
                    .expect("participant is registered");
                slots.insert(
                    id,
                    Slot {
                        first,
                        outcomes: vec![None; n],
                        remaining: n,
                    },
                );
                return;
            }
        }
    }
}

/// Runs every participant to completion on a shared conduit.
pub fn interleave<B: Backend>(conduit: &mut Conduit<B>, participants: &mut [&mut dyn Participant]) {
    let index: BTreeMap<ExperimentId, usize> = participants
        .iter()
        .enumerate()
        .map(|(i, p)| (p.experiment_id(), i))
        .collect();
    assert_eq!(index.len(), participants.len(), "experiment ids must be unique");

    let mut slots = BTreeMap::new();
    for p in participants.iter_mut() {
        conduit.register(p.experiment_id(), p.binding());
        submit_next(conduit, *p, &mut slots);
    }
    while !slots.is_empty() {
        conduit.dispatch_step();
        for finished in conduit.collect() {
            let id = finished.key.experiment;
            let slot = slots
                .get_mut(&id)
                .expect("results only arrive for active experiments");
            let i = (finished.key.sample.0 - slot.first) as usize;
            debug_assert!(slot.outcomes[i].is_none(), "sample reported twice");
            slot.outcomes[i] = Some(finished.outcome);
            slot.remaining -= 1;
            if slot.remaining == 0 {
                let slot = slots.remove(&id).expect("present");
                let outcomes = slot.outcomes.into_iter().map(Option::unwrap).collect();
                let p = &mut *participants[index[&id]];
                p.complete_batch(outcomes);
                submit_next(conduit, p, &mut slots);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conduit::backend::sim::SimBackend;
    use crate::conduit::{Job, Sample};

    struct Counter {
        id: ExperimentId,
        batches: usize,
        size: usize,
        next: u64,
        seen: Vec<Vec<f64>>,
        log: Arc<std::sync::Mutex<Vec<(u32, usize)>>>,
    }

    impl Participant for Counter {
        fn experiment_id(&self) -> ExperimentId {
            self.id
        }

        fn binding(&self) -> ModelBinding {
            let tag = self.id.0 as f64;
            ModelBinding::in_process(move |s: &mut Sample| {
                let x = s["X"];
                s.set("F(x)", x + 1000.0 * tag)
            })
        }

        fn variable_names(&self) -> Arc<Vec<String>> {
            Arc::new(vec!["X".into()])
        }

        fn next_batch(&mut self) -> Option<Batch> {
            if self.seen.len() == self.batches {
                return None;
            }
            self.log.lock().unwrap().push((self.id.0, self.seen.len()));
            let first = self.next;
            self.next += self.size as u64;
            Some(Batch {
                first_id: SampleId(first),
                params: (0..self.size).map(|i| vec![(first + i as u64) as f64]).collect(),
            })
        }

        fn complete_batch(&mut self, outcomes: Vec<SampleOutcome>) {
            self.seen.push(
                outcomes
                    .into_iter()
                    .map(|o| match o {
                        SampleOutcome::Completed(r) => r.real("F(x)").unwrap(),
                        SampleOutcome::Failed(_) => f64::NAN,
                    })
                    .collect(),
            );
        }
    }

    fn counter(id: u32, batches: usize, size: usize, log: &Arc<std::sync::Mutex<Vec<(u32, usize)>>>) -> Counter {
        Counter {
            id: ExperimentId(id),
            batches,
            size,
            next: 0,
            seen: Vec::new(),
            log: log.clone(),
        }
    }

    #[test]
    fn results_return_in_order_to_their_owner() {
        let log = Arc::default();
        let mut a = counter(0, 3, 5, &log);
        let mut b = counter(1, 2, 4, &log);
        let backend = SimBackend::new(3, |j: &Job| 1 + (j.key.sample.0 * 7919) % 13, 0);
        let mut conduit = Conduit::new(backend).unwrap();
        interleave(&mut conduit, &mut [&mut a, &mut b]);
        assert_eq!(a.seen.len(), 3);
        assert_eq!(b.seen.len(), 2);
        for (g, batch) in a.seen.iter().enumerate() {
            let want: Vec<f64> = (0..5).map(|i| (g * 5 + i) as f64).collect();
            assert_eq!(batch, &want);
        }
        assert_eq!(b.seen[1], vec![1004.0, 1005.0, 1006.0, 1007.0]);
        assert_eq!(conduit.stats().submitted, 23);
    }

    #[test]
    fn fast_experiment_does_not_wait_for_slow_one() {
        let log = Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut fast = counter(0, 3, 1, &log);
        let mut slow = counter(1, 1, 1, &log);
        let backend = SimBackend::new(2, |j: &Job| if j.key.experiment.0 == 0 { 1 } else { 100 }, 0);
        let mut conduit = Conduit::new(backend).unwrap();
        interleave(&mut conduit, &mut [&mut fast, &mut slow]);
        // all of the fast experiment's generations start before the slow one finishes
        assert_eq!(*log.lock().unwrap(), vec![(0, 0), (1, 0), (0, 1), (0, 2)]);
        assert_eq!(conduit.now(), 100);
    }
}
