use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use uqengine::conduit::backend::process::ProcessBackend;
use uqengine::conduit::{validate_transition_log, Conduit, ExperimentId, ModelBinding, SampleId, SampleOutcome};
use uqengine::config::{ModelSettings, ResultChannel};

const EXE: &str = env!("CARGO_BIN_EXE_uqengine");

fn concurrent(command: String) -> ModelBinding {
    ModelBinding::Concurrent(ModelSettings {
        command,
        channel: ResultChannel::Stdout,
        timeout_secs: None,
    })
}

fn drain(conduit: &mut Conduit<ProcessBackend>, n: usize) -> BTreeMap<u64, SampleOutcome> {
    let mut seen = BTreeMap::new();
    while seen.len() < n {
        conduit.dispatch_step();
        for f in conduit.collect() {
            assert!(seen.insert(f.key.sample.0, f.outcome).is_none(), "sample {} reported twice", f.key);
        }
    }
    seen
}

#[test]
fn killed_worker_is_replaced_and_its_sample_rerun() {
    let mut conduit = Conduit::new(ProcessBackend::new(3, EXE).unwrap()).unwrap();
    let e = ExperimentId(0);
    conduit.register(e, concurrent("sh -c 'sleep 0.3; echo {X}'".into()));
    let names = Arc::new(vec!["X".to_string()]);
    conduit
        .submit(e, names, (0..9).map(|i| (SampleId(i), vec![i as f64])).collect())
        .unwrap();
    conduit.dispatch_step();
    std::thread::sleep(Duration::from_millis(100));
    let victim = conduit.backend().worker_pids()[1];
    assert!(Command::new("kill").args(["-9", &victim.to_string()]).status().unwrap().success());
    let seen = drain(&mut conduit, 9);
    for (i, outcome) in &seen {
        match outcome {
            SampleOutcome::Completed(r) => assert_eq!(r.real("F(x)").unwrap(), *i as f64),
            SampleOutcome::Failed(why) => panic!("sample {i} failed: {why}"),
        }
    }
    assert_eq!(conduit.backend().respawns(), 1);
    let stats = conduit.stats();
    assert_eq!((stats.crashes, stats.requeued, stats.completed), (1, 1, 9));
    assert_ne!(conduit.backend().worker_pids()[1], victim);
    for w in conduit.workers() {
        validate_transition_log(w.transition_log()).unwrap();
    }
}

#[test]
fn model_that_kills_its_worker_once_is_retried() {
    let tmp = tempfile::tempdir().unwrap();
    let marker = tmp.path().join("killed-");
    let mut conduit = Conduit::new(ProcessBackend::new(2, EXE).unwrap()).unwrap();
    let e = ExperimentId(0);
    let cmd = format!(
        "sh -c 'm={}{{SampleId}}; if [ ! -e $m ]; then touch $m; kill -9 $PPID; sleep 1; fi; echo 1.5'",
        marker.display()
    );
    conduit.register(e, concurrent(cmd));
    conduit
        .submit(e, Arc::new(vec!["X".into()]), (0..4).map(|i| (SampleId(i), vec![0.0])).collect())
        .unwrap();
    let seen = drain(&mut conduit, 4);
    assert!(seen.values().all(|o| matches!(o, SampleOutcome::Completed(_))));
    assert_eq!(conduit.stats().crashes, 4);
    assert_eq!(conduit.backend().respawns(), 4);
}

#[test]
fn second_crash_fails_the_sample() {
    let mut conduit = Conduit::new(ProcessBackend::new(2, EXE).unwrap()).unwrap();
    let e = ExperimentId(0);
    conduit.register(e, concurrent("sh -c 'kill -9 $PPID; sleep 1'".into()));
    conduit
        .submit(e, Arc::new(vec!["X".into()]), vec![(SampleId(0), vec![0.0])])
        .unwrap();
    let seen = drain(&mut conduit, 1);
    assert!(matches!(seen[&0], SampleOutcome::Failed(_)));
    assert_eq!(conduit.stats().crashes, 2);
}

#[test]
fn in_process_models_are_refused() {
    let mut conduit = Conduit::new(ProcessBackend::new(1, EXE).unwrap()).unwrap();
    let e = ExperimentId(0);
    conduit.register(e, ModelBinding::in_process(|s| s.set("F(x)", 0.0)));
    conduit
        .submit(e, Arc::new(vec!["X".into()]), vec![(SampleId(0), vec![0.0])])
        .unwrap();
    let seen = drain(&mut conduit, 1);
    assert!(matches!(seen[&0], SampleOutcome::Failed(_)));
}
