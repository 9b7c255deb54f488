//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; `main` only maps the returned [`ExitCode`].

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchConfig, Clock, Scheduling, WaitModel};
use crate::conduit::backend::process::{worker_main, ProcessBackend};
use crate::conduit::backend::thread::ThreadBackend;
use crate::conduit::{teams_for_ranks, Backend, Conduit, ConduitError};
use crate::config::{ConfigError, ExperimentSettings};
use crate::engine::{self_check, Engine, EngineError, Experiment, SelfCheck};

pub const SEED_ENV: &str = "KORALI_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Validation = 1,
    Runtime = 2,
    Divergence = 3,
}

#[derive(Parser, Debug)]
#[command(name = "uqengine", version, about = "Run, resume and benchmark uncertainty quantification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one or more experiment files concurrently on a shared worker pool.
    Run(RunArgs),
    /// Continue experiments from their checkpoints.
    Resume(ResumeArgs),
    /// Synthetic wait-model benchmark.
    Bench(BenchArgs),
    /// Check an experiment file without running it.
    Validate { file: PathBuf },
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        id: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Threads,
    Processes,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    /// Number of worker teams.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Ranks per worker team.
    #[arg(long, default_value_t = 1)]
    pub team_size: usize,
    /// Total ranks including the engine's; overrides --workers.
    #[arg(long)]
    pub ranks: Option<usize>,
    #[arg(long, value_enum, default_value_t = BackendKind::Threads)]
    pub backend: BackendKind,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, default_value = "results")]
    pub outdir: PathBuf,
    /// Overrides the seed of every experiment (and KORALI_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many generations, leaving the experiments resumable.
    #[arg(long)]
    pub stint: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ResumeArgs {
    /// Checkpoint files, `latest` pointers or results directories.
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// `+N` runs N more generations; `N` runs until generation N.
    #[arg(long, allow_hyphen_values = false)]
    pub max_generations: Option<String>,
    /// Replay the checkpointed generation first and exit with code 3 if it
    /// is not reproduced byte for byte.
    #[arg(long)]
    pub self_check: bool,
    /// Stop after this many generations, leaving the experiments resumable.
    #[arg(long)]
    pub stint: Option<u64>,
    #[command(flatten)]
    pub pool: PoolArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Real,
    Sim,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    #[arg(long, default_value_t = 5)]
    pub generations: u64,
    #[arg(long, default_value_t = 4)]
    pub population_factor: usize,
    #[arg(long, value_name = "S", conflicts_with = "wait_uniform")]
    pub wait_fixed: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub wait_uniform: Option<Vec<f64>>,
    /// `single [K]` or `multiple K`: K experiments run one after another or
    /// sharing the pool.
    #[arg(long, num_args = 1..=2, value_names = ["MODE", "K"], default_value = "single")]
    pub scheduling: Vec<String>,
    #[arg(long, value_enum, default_value_t = ClockArg::Sim)]
    pub clock: ClockArg,
    /// Repetitions per worker count; more than one prints a median/min/max table.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Comma-separated worker counts for a weak-scaling sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.json, timeline.csv and the plotting script.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn fail(code: ExitCode, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    code
}

fn config_failure(file: &Path, e: &ConfigError) -> ExitCode {
    let path = e.path();
    if path.is_empty() {
        fail(ExitCode::Validation, format!("{}: {e}", file.display()))
    } else {
        fail(ExitCode::Validation, format!("{}: at '{path}': {e}", file.display()))
    }
}

fn engine_failure(e: EngineError) -> ExitCode {
    match e {
        EngineError::Config(_) | EngineError::NoModel(_) => fail(ExitCode::Validation, e),
        _ => fail(ExitCode::Runtime, e),
    }
}

fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

fn worker_count(pool: &PoolArgs) -> Result<usize, ConduitError> {
    match pool.ranks {
        Some(r) => teams_for_ranks(r, pool.team_size),
        None if pool.workers == 0 => Err(ConduitError::NoWorkers),
        None => Ok(pool.workers),
    }
}

fn drive<B: Backend>(conduit: Conduit<B>, experiments: &mut [Experiment]) {
    Engine::new(conduit).run(experiments);
}

fn run_pool(pool: &PoolArgs, experiments: &mut [Experiment]) -> Result<(), ExitCode> {
    let workers = worker_count(pool).map_err(|e| fail(ExitCode::Validation, e))?;
    match pool.backend {
        BackendKind::Threads => {
            let conduit = Conduit::with_team_size(ThreadBackend::new(workers), pool.team_size)
                .map_err(|e| fail(ExitCode::Validation, e))?;
            drive(conduit, experiments);
        }
        BackendKind::Processes => {
            let exe = std::env::current_exe().map_err(|e| fail(ExitCode::Runtime, e))?;
            let backend = ProcessBackend::new(workers, exe).map_err(|e| fail(ExitCode::Runtime, e))?;
            let conduit =
                Conduit::with_team_size(backend, pool.team_size).map_err(|e| fail(ExitCode::Validation, e))?;
            drive(conduit, experiments);
        }
    }
    Ok(())
}

fn report(experiments: &[Experiment]) -> ExitCode {
    let mut code = ExitCode::Success;
    for e in experiments {
        let s = e.state();
        let summary = s.solver.summary();
        let best = summary.best_value.map_or("none".to_string(), |v| v.to_string());
        let end = match (&s.termination, e.error()) {
            (_, Some(err)) => format!("error: {err}"),
            (Some(t), None) => format!("{t:?}"),
            (None, None) => "paused".to_string(),
        };
        println!(
            "{}: {} generations, {} evaluations, best {best}, {end}",
            s.name, s.generation, s.evaluations
        );
        if let Some(w) = &s.warning {
            eprintln!("warning: {}: {w}", s.name);
        }
        if let Some(err) = e.error() {
            eprintln!("error: {}: {err}", s.name);
            code = ExitCode::Runtime;
        }
    }
    code
}

fn run(args: RunArgs) -> ExitCode {
    let seed = match args.seed.map(Some).map_or_else(env_seed, Ok) {
        Ok(s) => s,
        Err(msg) => return fail(ExitCode::Validation, msg),
    };
    let mut names = HashSet::new();
    let mut experiments = Vec::new();
    for file in &args.files {
        let name = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        if !names.insert(name.clone()) {
            return fail(
                ExitCode::Validation,
                format!("two experiment files share the name '{name}'"),
            );
        }
        let mut settings = match ExperimentSettings::from_file(file) {
            Ok(s) => s,
            Err(e) => return config_failure(file, &e),
        };
        if let Some(seed) = seed {
            settings = settings.with_seed(seed);
        }
        let exp = Experiment::from_settings(name, settings).and_then(|e| e.with_output(&args.outdir));
        match exp {
            Ok(e) => experiments.push(match args.stint {
                Some(g) => e.with_stint(g),
                None => e,
            }),
            Err(e) => return engine_failure(e),
        }
    }
    if let Err(code) = run_pool(&args.pool, &mut experiments) {
        return code;
    }
    report(&experiments)
}

enum Budget {
    More(u64),
    Until(u64),
}

fn parse_budget(text: &str) -> Result<Budget, String> {
    let bad = || format!("--max-generations expects N or +N, got '{text}'");
    match text.strip_prefix('+') {
        Some(n) => n.parse().map(Budget::More).map_err(|_| bad()),
        None => text.parse().map(Budget::Until).map_err(|_| bad()),
    }
}

fn self_check_all(args: &ResumeArgs) -> Result<(), ExitCode> {
    let workers = worker_count(&args.pool).map_err(|e| fail(ExitCode::Validation, e))?;
    let mut conduit = Conduit::new(ThreadBackend::new(workers)).map_err(|e| fail(ExitCode::Validation, e))?;
    for path in &args.checkpoints {
        match self_check(path, None, &mut conduit) {
            Ok(SelfCheck::Identical) => println!("{}: self-check passed", path.display()),
            Ok(SelfCheck::Diverged { generation_index }) => {
                return Err(fail(
                    ExitCode::Divergence,
                    format!("{}: replay of generation {generation_index} diverged", path.display()),
                ));
            }
            Err(e) => return Err(engine_failure(e)),
        }
    }
    Ok(())
}

fn resume(args: ResumeArgs) -> ExitCode {
    let budget = match args.max_generations.as_deref().map(parse_budget).transpose() {
        Ok(b) => b,
        Err(msg) => return fail(ExitCode::Validation, msg),
    };
    if args.self_check {
        if let Err(code) = self_check_all(&args) {
            return code;
        }
    }
    let mut experiments = Vec::new();
    for path in &args.checkpoints {
        let mut e = match Experiment::resume(path, None) {
            Ok(e) => e,
            Err(e) => return engine_failure(e),
        };
        let extra = match budget {
            Some(Budget::More(n)) => Some(n),
            Some(Budget::Until(n)) => Some(n.saturating_sub(e.state().generation)),
            None => None,
        };
        if let Some(n) = extra {
            if let Err(err) = e.extend_generations(n) {
                return engine_failure(err);
            }
        }
        if let Some(g) = args.stint {
            e = e.with_stint(g);
        }
        experiments.push(e);
    }
    if let Err(code) = run_pool(&args.pool, &mut experiments) {
        return code;
    }
    report(&experiments)
}

fn bench_config(args: &BenchArgs) -> Result<BenchConfig, String> {
    let clock = match args.clock {
        ClockArg::Real => Clock::Real,
        ClockArg::Sim => Clock::Simulated,
    };
    let wait = match (&args.wait_fixed, &args.wait_uniform) {
        (Some(t), None) => WaitModel::fixed(*t, clock),
        (None, Some(r)) => WaitModel::uniform(r[0], r[1], clock),
        (None, None) => WaitModel::fixed(0.1, clock),
        (Some(_), Some(_)) => return Err("choose one of --wait-fixed and --wait-uniform".into()),
    };
    let (scheduling, experiments) = match args.scheduling.as_slice() {
        [m] if m == "single" => (Scheduling::Single, 1),
        [m, k] if m == "single" || m == "multiple" => {
            let k: usize = k.parse().map_err(|_| format!("bad experiment count '{k}'"))?;
            let s = if m == "single" { Scheduling::Single } else { Scheduling::Multiple };
            (s, k)
        }
        other => return Err(format!("--scheduling expects 'single [K]' or 'multiple K', got {other:?}")),
    };
    Ok(BenchConfig {
        workers: args.workers,
        generations: args.generations,
        population_factor: args.population_factor,
        wait,
        scheduling,
        experiments,
        seed: args.seed,
    })
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(dir.join(name), text)
}

fn run_bench(args: BenchArgs) -> ExitCode {
    let config = match bench_config(&args) {
        Ok(c) => c,
        Err(msg) => return fail(ExitCode::Validation, msg),
    };
    if args.sweep.is_some() || args.reps > 1 {
        let counts = args.sweep.clone().unwrap_or_else(|| vec![config.workers]);
        let rows = match bench::weak_scaling_sweep(&config, &counts, args.reps) {
            Ok(r) => r,
            Err(e) => return fail(ExitCode::Runtime, e),
        };
        println!("workers,median,min,max");
        for r in &rows {
            println!("{},{:.6},{:.6},{:.6}", r.workers, r.median, r.min, r.max);
        }
        if let Some(dir) = &args.out {
            if let Err(e) = write_json(dir, "sweep.json", &rows) {
                return fail(ExitCode::Runtime, e);
            }
        }
        return ExitCode::Success;
    }
    let report = match bench::bench_run(&config) {
        Ok(r) => r,
        Err(bench::BenchError::Invalid(msg)) => return fail(ExitCode::Validation, msg),
        Err(e) => return fail(ExitCode::Runtime, e),
    };
    println!(
        "workers {} evaluations {} ideal {:.6}s makespan {:.6}s busy {:.6}s idle {:.6}s e_ideal {:.4} e_busy {:.4}",
        report.workers,
        report.evaluations,
        report.ideal,
        report.makespan,
        report.busy,
        report.idle,
        report.e_ideal,
        report.e_busy
    );
    if let Some(dir) = &args.out {
        let written = write_json(dir, "report.json", &serde_json::json!({"config": config, "report": {
            "workers": report.workers,
            "evaluations": report.evaluations,
            "ideal": report.ideal,
            "makespan": report.makespan,
            "busy": report.busy,
            "node_time": report.node_time,
            "idle": report.idle,
            "e_ideal": report.e_ideal,
            "e_busy": report.e_busy,
        }}))
        .and_then(|_| bench::timeline_export(&report, dir).map(|_| ()));
        if let Err(e) = written {
            return fail(ExitCode::Runtime, e);
        }
    }
    ExitCode::Success
}

fn validate_file(file: &Path) -> ExitCode {
    match ExperimentSettings::from_file(file) {
        Ok(s) => {
            println!(
                "{}: ok ({} variables, problem {})",
                file.display(),
                s.space.len(),
                s.config.string("Problem/Type").unwrap_or("?")
            );
            ExitCode::Success
        }
        Err(e) => config_failure(file, &e),
    }
}

pub fn execute(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Resume(args) => resume(args),
        Command::Bench(args) => run_bench(args),
        Command::Validate { file } => validate_file(&file),
        Command::Worker { id } => match worker_main(id) {
            Ok(()) => ExitCode::Success,
            Err(e) => fail(ExitCode::Runtime, e),
        },
    }
}

/// Parses `argv` and runs the command. Usage errors exit with the
/// validation code; `--help` and `--version` succeed.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Validation } else { ExitCode::Success };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn budgets_parse() {
        assert!(matches!(parse_budget("+5"), Ok(Budget::More(5))));
        assert!(matches!(parse_budget("12"), Ok(Budget::Until(12))));
        assert!(parse_budget("+x").is_err());
        assert!(parse_budget("-3").is_err());
    }

    #[test]
    fn scheduling_flag_forms() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["uqengine", "bench"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Bench(b) => bench_config(&b),
                _ => unreachable!(),
            }
        };
        let c = parse(&[]).unwrap();
        assert_eq!((c.scheduling, c.experiments), (Scheduling::Single, 1));
        let c = parse(&["--scheduling", "multiple", "5"]).unwrap();
        assert_eq!((c.scheduling, c.experiments), (Scheduling::Multiple, 5));
        let c = parse(&["--scheduling", "single", "5", "--wait-uniform", "0.05", "0.15"]).unwrap();
        assert_eq!((c.scheduling, c.experiments), (Scheduling::Single, 5));
        assert_eq!(c.wait, WaitModel::uniform(0.05, 0.15, Clock::Simulated));
        assert!(parse(&["--scheduling", "multiple"]).is_err());
        assert!(parse(&["--scheduling", "fastest"]).is_err());
    }

    #[test]
    fn ranks_reserve_one_for_the_engine() {
        let pool = |ranks, team_size| PoolArgs {
            workers: 1,
            team_size,
            ranks: Some(ranks),
            backend: BackendKind::Threads,
        };
        assert_eq!(worker_count(&pool(9, 2)).unwrap(), 4);
        assert!(worker_count(&pool(1, 1)).is_err());
    }

    #[test]
    fn usage_errors_are_validation_errors() {
        for argv in [&["uqengine", "launch"][..], &["uqengine", "run"]] {
            assert!(Cli::try_parse_from(argv).unwrap_err().use_stderr());
        }
        assert!(!Cli::try_parse_from(["uqengine", "--version"]).unwrap_err().use_stderr());
    }
}
