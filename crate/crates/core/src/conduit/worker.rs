use serde::{Deserialize, Serialize};

use super::{ConduitError, SampleKey, WorkerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkerState {
    Idle,
    Busy,
    /// The model finished; the result has not been retrieved yet.
    Pending,
}

/// One stretch of model execution on a worker, in backend clock
/// nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusyInterval {
    pub start: u64,
    pub end: u64,
    pub key: SampleKey,
}

/// Conduit-side record of one worker team.
#[derive(Clone, Debug)]
pub struct WorkerHandle {
    id: WorkerId,
    team_size: usize,
    state: WorkerState,
    current: Option<SampleKey>,
    log: Vec<WorkerState>,
    intervals: Vec<BusyInterval>,
}

impl WorkerHandle {
    pub fn new(id: WorkerId, team_size: usize) -> Self {
        WorkerHandle {
            id,
            team_size,
            state: WorkerState::Idle,
            current: None,
            log: vec![WorkerState::Idle],
            intervals: Vec::new(),
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn team_size(&self) -> usize {
        self.team_size
    }

    pub fn state(&self) -> WorkerState {
        self.state
    }

    pub fn current(&self) -> Option<SampleKey> {
        self.current
    }

    /// Every state entered, starting with the initial `Idle`.
    pub fn transition_log(&self) -> &[WorkerState] {
        &self.log
    }

    pub fn intervals(&self) -> &[BusyInterval] {
        &self.intervals
    }

    pub(crate) fn clear_intervals(&mut self) {
        self.intervals.clear();
    }

    fn transition(&mut self, to: WorkerState) -> Result<(), ConduitError> {
        use WorkerState::*;
        let legal = matches!(
            (self.state, to),
            (Idle, Busy) | (Busy, Pending) | (Pending, Idle)
        );
        if !legal {
            return Err(ConduitError::IllegalTransition {
                worker: self.id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.log.push(to);
        Ok(())
    }

    /// Idle → Busy.
    pub fn assign(&mut self, key: SampleKey) -> Result<(), ConduitError> {
        self.transition(WorkerState::Busy)?;
        self.current = Some(key);
        Ok(())
    }

    /// Busy → Pending; closes the busy interval.
    pub fn complete(&mut self, key: SampleKey, start: u64, end: u64) -> Result<(), ConduitError> {
        if self.current != Some(key) {
            return Err(ConduitError::IllegalTransition {
                worker: self.id,
                from: self.state,
                to: WorkerState::Pending,
            });
        }
        self.transition(WorkerState::Pending)?;
        self.intervals.push(BusyInterval { start, end, key });
        Ok(())
    }

    /// Pending → Idle; hands back the finished sample's key.
    pub fn retrieve(&mut self) -> Result<SampleKey, ConduitError> {
        self.transition(WorkerState::Idle)?;
        Ok(self.current.take().expect("pending worker holds a sample"))
    }
}

/// Checks a transition log against `(Idle Busy Pending)* Idle?`. On failure
/// returns the index of the first offending entry.
pub fn validate_transition_log(log: &[WorkerState]) -> Result<(), usize> {
    use WorkerState::*;
    const CYCLE: [WorkerState; 3] = [Idle, Busy, Pending];
    for (i, state) in log.iter().enumerate() {
        if *state != CYCLE[i % 3] {
            return Err(i);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conduit::{ExperimentId, SampleId};
    use proptest::prelude::*;
    use WorkerState::*;

    fn key(i: u64) -> SampleKey {
        SampleKey {
            experiment: ExperimentId(0),
            sample: SampleId(i),
        }
    }

    #[test]
    fn full_cycle() {
        let mut w = WorkerHandle::new(WorkerId(0), 1);
        w.assign(key(1)).unwrap();
        w.complete(key(1), 0, 5).unwrap();
        assert_eq!(w.retrieve().unwrap(), key(1));
        assert_eq!(w.transition_log(), &[Idle, Busy, Pending, Idle]);
        assert_eq!(validate_transition_log(w.transition_log()), Ok(()));
        assert_eq!(w.intervals().len(), 1);
    }

    #[test]
    fn illegal_transitions_are_refused() {
        let mut w = WorkerHandle::new(WorkerId(3), 1);
        assert!(w.retrieve().is_err());
        assert!(w.complete(key(0), 0, 1).is_err());
        w.assign(key(0)).unwrap();
        assert!(w.assign(key(1)).is_err());
        assert!(w.complete(key(9), 0, 1).is_err());
        assert_eq!(w.state(), Busy);
    }

    #[test]
    fn validator_rejects_skips() {
        assert_eq!(validate_transition_log(&[Idle, Busy, Idle]), Err(2));
        assert_eq!(validate_transition_log(&[Busy]), Err(0));
        assert_eq!(validate_transition_log(&[Idle, Busy, Pending]), Ok(()));
        assert_eq!(validate_transition_log(&[]), Ok(()));
    }

    proptest! {
        #[test]
        fn any_operation_sequence_keeps_a_valid_log(ops in prop::collection::vec(0u8..3, 0..60)) {
            let mut w = WorkerHandle::new(WorkerId(0), 1);
            for (i, op) in ops.into_iter().enumerate() {
                let _ = match op {
                    0 => w.assign(key(i as u64)),
                    1 => match w.current() {
                        Some(k) => w.complete(k, 0, 1),
                        None => w.complete(key(0), 0, 1),
                    },
                    _ => w.retrieve().map(|_| ()),
                };
            }
            prop_assert_eq!(validate_transition_log(w.transition_log()), Ok(()));
        }
    }
}
