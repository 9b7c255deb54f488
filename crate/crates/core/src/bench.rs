//! Synthetic wait-model benchmark and scheduling-efficiency reports.
//!
//! Every sample of a trivial one-variable optimization sleeps for a drawn
//! time and returns a random objective. Waits are keyed by (experiment,
//! sample) so single and multiple scheduling of the same experiment set see
//! identical workloads.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::conduit::backend::sim::SimBackend;
use crate::conduit::backend::thread::ThreadBackend;
use crate::conduit::{Backend, Conduit, ConduitError, ModelBinding, Sample};
use crate::config::{ConfigTree, ExperimentSettings};
use crate::engine::{Engine, EngineError, Experiment};
use crate::rng::RngStream;

const WAIT_STREAM: &str = "bench/wait";
const RESULT_STREAM: &str = "bench/result";
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const PLOT_SCRIPT: &str = "plot_timeline.py";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Conduit(#[from] ConduitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("experiment {0} failed: {1}")]
    Experiment(usize, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum WaitMode {
    Fixed(f64),
    UniformRange(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Clock {
    Real,
    Simulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WaitModel {
    pub mode: WaitMode,
    pub clock: Clock,
}

fn draw_index(experiment: u32, sample: u64) -> u64 {
    (u64::from(experiment) << 40) | sample
}

impl WaitModel {
    pub fn fixed(seconds: f64, clock: Clock) -> Self {
        WaitModel {
            mode: WaitMode::Fixed(seconds),
            clock,
        }
    }

    pub fn uniform(lo: f64, hi: f64, clock: Clock) -> Self {
        WaitModel {
            mode: WaitMode::UniformRange(lo, hi),
            clock,
        }
    }

    fn check(&self) -> Result<(), BenchError> {
        match self.mode {
            WaitMode::Fixed(t) if t.is_finite() && t >= 0.0 => Ok(()),
            WaitMode::UniformRange(lo, hi) if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi => {
                Ok(())
            }
            m => Err(BenchError::Invalid(format!("wait model {m:?}"))),
        }
    }

    /// Wait of one sample, in nanoseconds.
    pub fn nanos(&self, seed: u64, experiment: u32, sample: u64) -> u64 {
        let seconds = match self.mode {
            WaitMode::Fixed(t) => t,
            WaitMode::UniformRange(lo, hi) => {
                let u = RngStream::keyed(seed, WAIT_STREAM, draw_index(experiment, sample)).uniform();
                lo + (hi - lo) * u
            }
        };
        (seconds * 1e9).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scheduling {
    /// Experiments run one after another, each using the whole pool.
    Single,
    /// Experiments share the pool concurrently.
    Multiple,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub workers: usize,
    pub generations: u64,
    /// Samples per generation are this times the worker count.
    pub population_factor: usize,
    pub wait: WaitModel,
    pub scheduling: Scheduling,
    pub experiments: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(workers: usize, wait: WaitModel) -> Self {
        BenchConfig {
            workers,
            generations: 5,
            population_factor: 4,
            wait,
            scheduling: Scheduling::Single,
            experiments: 1,
            seed: 0,
        }
    }

    fn check(&self) -> Result<(), BenchError> {
        self.wait.check()?;
        if self.workers == 0 {
            return Err(BenchError::Invalid("workers must be at least 1".into()));
        }
        if self.population_factor == 0 || self.workers * self.population_factor < 2 {
            return Err(BenchError::Invalid("population must be at least 2".into()));
        }
        if self.experiments == 0 {
            return Err(BenchError::Invalid("experiment count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One busy stretch of a worker, in seconds from the start of the run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineRow {
    pub worker: usize,
    pub start: f64,
    pub end: f64,
    pub experiment: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub workers: usize,
    pub evaluations: u64,
    /// Total wait divided by the worker count.
    pub ideal: f64,
    pub makespan: f64,
    pub busy: f64,
    pub node_time: f64,
    pub idle: f64,
    pub e_ideal: f64,
    pub e_busy: f64,
    pub timeline: Vec<TimelineRow>,
}

impl EfficiencyReport {
    /// Idle time recomputed from the gaps between busy intervals.
    pub fn idle_from_timeline(&self) -> f64 {
        (0..self.workers)
            .map(|w| {
                let mut rows: Vec<&TimelineRow> = self.timeline.iter().filter(|r| r.worker == w).collect();
                rows.sort_by(|a, b| a.start.total_cmp(&b.start));
                let mut t = 0.0;
                let mut gaps = 0.0;
                for r in rows {
                    gaps += (r.start - t).max(0.0);
                    t = t.max(r.end);
                }
                gaps + (self.makespan - t).max(0.0)
            })
            .sum()
    }
}

fn settings(config: &BenchConfig, k: usize) -> Result<ExperimentSettings, BenchError> {
    let tree = ConfigTree::from_value(json!({
        "Random Seed": config.seed.wrapping_add(k as u64),
        "Problem": {"Type": "Optimization"},
        "Variables": [{"Name": "X", "Lower Bound": -1.0, "Upper Bound": 1.0}],
        "Solver": {
            "Type": "CMAES",
            "Population Size": config.workers * config.population_factor,
            "Max Generations": config.generations
        }
    }))
    .map_err(EngineError::from)?;
    Ok(ExperimentSettings::from_tree(&tree).map_err(EngineError::from)?)
}

fn binding(config: &BenchConfig) -> ModelBinding {
    let wait = config.wait;
    let seed = config.seed;
    ModelBinding::in_process(move |s: &mut Sample| {
        let (e, i) = (s.key.experiment.0, s.key.sample.0);
        if wait.clock == Clock::Real {
            std::thread::sleep(std::time::Duration::from_nanos(wait.nanos(seed, e, i)));
        }
        let r = RngStream::keyed(seed, RESULT_STREAM, draw_index(e, i)).uniform();
        s.set("F(x)", r);
    })
}

fn run_on<B: Backend>(config: &BenchConfig, conduit: Conduit<B>) -> Result<EfficiencyReport, BenchError> {
    let mut engine = Engine::new(conduit);
    let mut experiments = (0..config.experiments)
        .map(|k| Ok(Experiment::new(format!("bench{k}"), settings(config, k)?, binding(config))?))
        .collect::<Result<Vec<_>, BenchError>>()?;
    let t0 = engine.conduit().now();
    match config.scheduling {
        Scheduling::Multiple => engine.run(&mut experiments),
        Scheduling::Single => {
            for e in experiments.iter_mut() {
                engine.run(std::slice::from_mut(e));
            }
        }
    }
    let t1 = engine.conduit().now();
    for (k, e) in experiments.iter().enumerate() {
        if let Some(err) = e.error() {
            return Err(BenchError::Experiment(k, err.to_string()));
        }
    }

    let conduit = engine.conduit();
    let intervals = conduit.busy_intervals();
    let n = config.workers as u64;
    let makespan_ns = t1 - t0;
    let busy_ns: u64 = intervals.iter().map(|(_, b)| b.end - b.start).sum();
    let waited_ns: u64 = intervals
        .iter()
        .map(|(_, b)| config.wait.nanos(config.seed, b.key.experiment.0, b.key.sample.0))
        .sum();
    let node_ns = n * makespan_ns;
    let secs = |ns: u64| ns as f64 * 1e-9;
    let mut timeline: Vec<TimelineRow> = intervals
        .iter()
        .map(|(w, b)| TimelineRow {
            worker: w.0,
            start: secs(b.start - t0),
            end: secs(b.end - t0),
            experiment: b.key.experiment.0,
        })
        .collect();
    timeline.sort_by(|a, b| a.worker.cmp(&b.worker).then(a.start.total_cmp(&b.start)));
    let ideal = waited_ns as f64 / n as f64 * 1e-9;
    let makespan = secs(makespan_ns);
    Ok(EfficiencyReport {
        workers: config.workers,
        evaluations: intervals.len() as u64,
        ideal,
        makespan,
        busy: secs(busy_ns),
        node_time: secs(node_ns),
        idle: secs(node_ns.saturating_sub(busy_ns)),
        e_ideal: if makespan_ns == 0 { 1.0 } else { waited_ns as f64 / n as f64 / makespan_ns as f64 },
        e_busy: if node_ns == 0 { 1.0 } else { busy_ns as f64 / node_ns as f64 },
        timeline,
    })
}

/// Runs the benchmark once.
pub fn bench_run(config: &BenchConfig) -> Result<EfficiencyReport, BenchError> {
    config.check()?;
    match config.wait.clock {
        Clock::Real => run_on(config, Conduit::new(ThreadBackend::new(config.workers))?),
        Clock::Simulated => {
            let wait = config.wait;
            let seed = config.seed;
            let backend = SimBackend::new(
                config.workers,
                move |job: &crate::conduit::Job| wait.nanos(seed, job.key.experiment.0, job.key.sample.0),
                seed,
            );
            run_on(config, Conduit::new(backend)?)
        }
    }
}

/// Writes `timeline.csv` (worker, start, end, experiment; seconds) and a
/// matplotlib script that draws it.
pub fn timeline_export(report: &EfficiencyReport, dir: &Path) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("worker,start,end,experiment\n");
    for r in &report.timeline {
        csv.push_str(&format!("{},{:.9},{:.9},{}\n", r.worker, r.start, r.end, r.experiment));
    }
    let path = dir.join(TIMELINE_CSV);
    std::fs::write(&path, csv)?;
    std::fs::write(dir.join(PLOT_SCRIPT), PLOT_SOURCE)?;
    Ok(path)
}

const PLOT_SOURCE: &str = r#"#!/usr/bin/env python3
"""Draws timeline.csv: one line per worker, one segment per model run."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "timeline.csv"
rows = list(csv.DictReader(open(path)))
fig, ax = plt.subplots(figsize=(10, 4))
for r in rows:
    w = int(r["worker"])
    ax.plot([float(r["start"]), float(r["end"])], [w, w], lw=6,
            color=f"C{int(r['experiment']) % 10}", solid_capstyle="butt")
ax.set_xlabel("time [s]")
ax.set_ylabel("worker")
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"#;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub workers: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// For every worker count, `reps` runs of `base` with seeds
/// `base.seed + r`, summarized by their e_ideal.
pub fn weak_scaling_sweep(base: &BenchConfig, counts: &[usize], reps: usize) -> Result<Vec<SweepRow>, BenchError> {
    if reps == 0 {
        return Err(BenchError::Invalid("repetitions must be at least 1".into()));
    }
    counts
        .iter()
        .map(|&workers| {
            let e = (0..reps)
                .map(|r| {
                    let config = BenchConfig {
                        workers,
                        seed: base.seed.wrapping_add(r as u64),
                        ..base.clone()
                    };
                    Ok(bench_run(&config)?.e_ideal)
                })
                .collect::<Result<Vec<f64>, BenchError>>()?;
            Ok(SweepRow {
                workers,
                median: median(&e),
                min: e.iter().copied().fold(f64::INFINITY, f64::min),
                max: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(workers: usize, wait: WaitMode) -> BenchConfig {
        BenchConfig::new(
            workers,
            WaitModel {
                mode: wait,
                clock: Clock::Simulated,
            },
        )
    }

    #[test]
    fn fixed_wait_in_simulation_is_perfectly_efficient() {
        for n in [1, 3, 8] {
            let r = bench_run(&sim(n, WaitMode::Fixed(0.1))).unwrap();
            assert_eq!(r.e_ideal, 1.0);
            assert_eq!(r.e_busy, 1.0);
            assert_eq!(r.evaluations, 4 * n as u64 * 5);
            assert!((r.makespan - 2.0).abs() < 1e-12);
            assert!((r.ideal - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn accounting_identity_holds_exactly_in_simulation() {
        let mut c = sim(8, WaitMode::UniformRange(0.04, 0.10));
        c.experiments = 3;
        for s in [Scheduling::Single, Scheduling::Multiple] {
            c.scheduling = s;
            let r = bench_run(&c).unwrap();
            let ns = |x: f64| (x * 1e9).round() as u64;
            assert_eq!(ns(r.busy) + ns(r.idle), ns(r.node_time));
            assert_eq!(ns(r.node_time), 8 * ns(r.makespan));
            assert!((r.idle_from_timeline() - r.idle).abs() < 1e-6);
            assert!(r.e_ideal > 0.0 && r.e_ideal <= 1.0);
        }
    }

    #[test]
    fn waits_do_not_depend_on_scheduling() {
        let m = WaitModel::uniform(1.0, 3.0, Clock::Simulated);
        let a = m.nanos(5, 2, 17);
        assert_eq!(a, m.nanos(5, 2, 17));
        assert_ne!(a, m.nanos(5, 3, 17));
        assert!((1_000_000_000..=3_000_000_000).contains(&a));
    }

    #[test]
    fn multiple_scheduling_beats_sequential() {
        let mut c = sim(8, WaitMode::UniformRange(0.04, 0.10));
        c.experiments = 5;
        let single = bench_run(&c).unwrap();
        c.scheduling = Scheduling::Multiple;
        let multiple = bench_run(&c).unwrap();
        assert!((single.busy - multiple.busy).abs() < 1e-9);
        assert!(multiple.e_busy > single.e_busy + 0.10, "{} vs {}", multiple.e_busy, single.e_busy);
        assert!(multiple.makespan < single.makespan);
    }

    #[test]
    fn multiple_never_loses_on_small_cases() {
        for n in 1..=4 {
            for g in 1..=3 {
                for k in 1..=3 {
                    let mut c = sim(n, WaitMode::UniformRange(0.01, 0.05));
                    c.generations = g;
                    c.experiments = k;
                    c.seed = (n * 100 + g as usize * 10 + k) as u64;
                    let single = bench_run(&c).unwrap();
                    c.scheduling = Scheduling::Multiple;
                    let multiple = bench_run(&c).unwrap();
                    assert!(multiple.busy >= single.busy - 1e-9);
                    assert!(multiple.makespan <= single.makespan + 1e-9, "n={n} g={g} k={k}");
                }
            }
        }
    }

    #[test]
    fn timeline_has_one_row_per_sample() {
        let mut c = sim(2, WaitMode::Fixed(0.01));
        c.population_factor = 1;
        c.generations = 2;
        let r = bench_run(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = timeline_export(&r, dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(dir.path().join(PLOT_SCRIPT).exists());
        let workers: Vec<&str> = text.lines().skip(1).map(|l| &l[..1]).collect();
        assert_eq!(workers, ["0", "0", "1", "1"]);
    }

    #[test]
    fn empty_timeline_is_header_only() {
        let r = EfficiencyReport {
            workers: 1,
            evaluations: 0,
            ideal: 0.0,
            makespan: 0.0,
            busy: 0.0,
            node_time: 0.0,
            idle: 0.0,
            e_ideal: 1.0,
            e_busy: 1.0,
            timeline: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let text = std::fs::read_to_string(timeline_export(&r, dir.path()).unwrap()).unwrap();
        assert_eq!(text, "worker,start,end,experiment\n");
    }

    #[test]
    fn sweep_of_fixed_waits_is_flat() {
        let rows = weak_scaling_sweep(&sim(0, WaitMode::Fixed(0.5)), &[2, 4, 8, 16], 10).unwrap();
        assert!(rows.iter().all(|r| r.median == 1.0 && r.min == 1.0 && r.max == 1.0));
    }

    #[test]
    fn sweep_of_imbalanced_waits_degrades_with_scale() {
        let rows = weak_scaling_sweep(&sim(0, WaitMode::UniformRange(0.04, 0.10)), &[2, 4, 8, 16], 10).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].median <= pair[0].median, "{rows:?}");
        }
        assert!(rows.iter().all(|r| r.min <= r.median && r.median <= r.max));
    }

    #[test]
    fn single_repetition_collapses_the_range() {
        let rows = weak_scaling_sweep(&sim(0, WaitMode::UniformRange(0.04, 0.10)), &[4], 1).unwrap();
        assert_eq!(rows[0].min, rows[0].median);
        assert_eq!(rows[0].max, rows[0].median);
    }

    #[test]
    fn median_of_even_count_averages_the_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn bad_settings_are_rejected() {
        assert!(bench_run(&sim(0, WaitMode::Fixed(0.1))).is_err());
        assert!(bench_run(&sim(2, WaitMode::UniformRange(0.2, 0.1))).is_err());
        assert!(weak_scaling_sweep(&sim(2, WaitMode::Fixed(0.1)), &[2], 0).is_err());
    }

    #[test]
    fn real_clock_fixed_wait_accounts_within_a_percent() {
        let mut c = BenchConfig::new(4, WaitModel::fixed(0.02, Clock::Real));
        c.generations = 2;
        let r = bench_run(&c).unwrap();
        assert_eq!(r.evaluations, 32);
        assert!((r.busy + r.idle - r.node_time).abs() <= 0.01 * r.node_time);
        assert!(r.e_ideal > 0.0 && r.e_ideal <= 1.0);
    }
}
