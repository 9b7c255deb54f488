//! Fork/join execution of external models.
//!
//! The command template is split with shell quoting rules, then every
//! `{Name}` token is replaced by the value of variable `Name` (and
//! `{SampleId}`, `{ExperimentId}` by the sample's tags). The child's result
//! is either the last non-empty line of its standard output or the contents
//! of a result file: a bare real is read as `"F(x)"`, otherwise a JSON object
//! mapping result keys to numbers or lists of numbers.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{SampleKey, WorkerId};
use crate::config::{ModelSettings, ResultChannel};
use crate::problem::{ResultValue, SampleResult, OBJECTIVE_KEY};

pub const WORKER_ID_ENV: &str = "KORALI_WORKER_ID";
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("bad command template: {0}")]
    Template(String),
    #[error("could not launch model: {0}")]
    Spawn(String),
    #[error("model exited with status {code}: {stderr}")]
    NonZeroExit { code: i32, stderr: String },
    #[error("model was killed by signal {0}")]
    Signaled(i32),
    #[error("cannot parse model output: {0}")]
    ParseFailure(String),
    #[error("model exceeded its {0} s timeout")]
    Timeout(f64),
}

impl ModelError {
    /// Failures that say nothing about the sample itself.
    pub fn is_crash(&self) -> bool {
        matches!(self, ModelError::Signaled(_))
    }
}

fn substitute(word: &str, names: &[String], params: &[f64], key: SampleKey) -> Result<String, ModelError> {
    let mut out = String::with_capacity(word.len());
    let mut rest = word;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| ModelError::Template(format!("unclosed '{{' in '{word}'")))?;
        let token = &after[..close];
        if out.ends_with('$') {
            // shell parameter expansion, left for the shell
            out.push('{');
            out.push_str(token);
            out.push('}');
            rest = &after[close + 1..];
            continue;
        }
        let value = match token {
            "SampleId" => key.sample.0.to_string(),
            "ExperimentId" => key.experiment.0.to_string(),
            name => match names.iter().position(|n| n == name) {
                Some(i) => format!("{}", params[i]),
                None => return Err(ModelError::Template(format!("unknown placeholder '{{{name}}}'"))),
            },
        };
        out.push_str(&value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The argument vector the template expands to for one sample.
pub fn expand_command(
    template: &str,
    names: &[String],
    params: &[f64],
    key: SampleKey,
) -> Result<Vec<String>, ModelError> {
    let words = shlex::split(template)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| ModelError::Template(format!("cannot split '{template}'")))?;
    words
        .iter()
        .map(|w| substitute(w, names, params, key))
        .collect()
}

fn parse_real(text: &str) -> Option<f64> {
    text.trim().replace('\u{2212}', "-").parse::<f64>().ok()
}

/// Parses model output: a bare real or a JSON object of result values.
pub fn parse_output(text: &str) -> Result<SampleResult, ModelError> {
    let line = text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| ModelError::ParseFailure("empty output".into()))?;
    if let Some(v) = parse_real(line) {
        return Ok(SampleResult::new().with(OBJECTIVE_KEY, v));
    }
    let doc: std::collections::BTreeMap<String, ResultValue> = serde_json::from_str(line)
        .map_err(|_| ModelError::ParseFailure(format!("'{line}' is neither a real nor a result object")))?;
    let mut result = SampleResult::new();
    for (k, v) in doc {
        result.set(k, v);
    }
    Ok(result)
}

#[cfg(unix)]
fn signal_of(status: &ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn signal_of(_: &ExitStatus) -> Option<i32> {
    None
}

/// Runs one sample through an external executable and parses its result.
pub fn run_concurrent_model(
    model: &ModelSettings,
    names: &[String],
    params: &[f64],
    key: SampleKey,
    worker: WorkerId,
) -> Result<SampleResult, ModelError> {
    let argv = expand_command(&model.command, names, params, key)?;
    let result_file = match &model.channel {
        ResultChannel::File(path) => Some(PathBuf::from(substitute(path, names, params, key)?)),
        ResultChannel::Stdout => None,
    };
    if let Some(path) = &result_file {
        let _ = std::fs::remove_file(path);
    }
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .env(WORKER_ID_ENV, worker.0.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| ModelError::Spawn(format!("{}: {e}", argv[0])))?;

    let mut stdout = child.stdout.take().expect("stdout is piped");
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let out_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| ModelError::Spawn(e.to_string()))? {
            break status;
        }
        if let Some(limit) = model.timeout_secs {
            if started.elapsed().as_secs_f64() > limit {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ModelError::Timeout(limit));
            }
        }
        thread::sleep(POLL);
    };
    let output = out_reader.join().unwrap_or_default();
    let errors = err_reader.join().unwrap_or_default();

    if let Some(sig) = signal_of(&status) {
        return Err(ModelError::Signaled(sig));
    }
    if !status.success() {
        return Err(ModelError::NonZeroExit {
            code: status.code().unwrap_or(-1),
            stderr: errors.trim().chars().take(500).collect(),
        });
    }
    match result_file {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ModelError::ParseFailure(format!("{}: {e}", path.display())))?;
            let _ = std::fs::remove_file(&path);
            parse_output(&text)
        }
        None => parse_output(&output),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conduit::{ExperimentId, SampleId};
    use crate::problem::REFERENCE_EVALUATIONS_KEY;

    fn key() -> SampleKey {
        SampleKey {
            experiment: ExperimentId(2),
            sample: SampleId(17),
        }
    }

    fn model(command: &str) -> ModelSettings {
        ModelSettings {
            command: command.into(),
            channel: ResultChannel::Stdout,
            timeout_secs: None,
        }
    }

    fn names() -> Vec<String> {
        vec!["X".into()]
    }

    #[test]
    fn template_expansion() {
        let argv = expand_command("./myApp -x {X} --tag 'e{ExperimentId} s{SampleId}'", &names(), &[2.0], key())
            .unwrap();
        assert_eq!(argv, vec!["./myApp", "-x", "2", "--tag", "e2 s17"]);
        assert!(matches!(
            expand_command("app {Y}", &names(), &[2.0], key()),
            Err(ModelError::Template(_))
        ));
    }

    #[test]
    fn parses_bare_reals_and_documents() {
        assert_eq!(parse_output("noise\n-4.0\n\n").unwrap().real("F(x)").unwrap(), -4.0);
        assert_eq!(parse_output("\u{2212}4.0").unwrap().real("F(x)").unwrap(), -4.0);
        let r = parse_output(r#"{"Reference Evaluations": [1.0, 2.5]}"#).unwrap();
        assert_eq!(r.vector(REFERENCE_EVALUATIONS_KEY).unwrap(), &[1.0, 2.5]);
        assert!(matches!(parse_output("hello"), Err(ModelError::ParseFailure(_))));
        assert!(matches!(parse_output(""), Err(ModelError::ParseFailure(_))));
    }

    #[test]
    fn stdout_child_result() {
        let m = model("sh -c 'echo \"-$(({X}*{X})).0\"'");
        let r = run_concurrent_model(&m, &names(), &[2.0], key(), WorkerId(0)).unwrap();
        assert_eq!(r.real("F(x)").unwrap(), -4.0);
    }

    #[test]
    fn worker_id_is_exported() {
        let m = model("sh -c 'echo ${KORALI_WORKER_ID}'");
        let r = run_concurrent_model(&m, &names(), &[0.0], key(), WorkerId(5)).unwrap();
        assert_eq!(r.real("F(x)").unwrap(), 5.0);
    }

    #[test]
    fn nonzero_exit_and_garbage() {
        let err = run_concurrent_model(&model("sh -c 'exit 3'"), &names(), &[0.0], key(), WorkerId(0))
            .unwrap_err();
        assert!(matches!(err, ModelError::NonZeroExit { code: 3, .. }));
        let err = run_concurrent_model(&model("echo banana"), &names(), &[0.0], key(), WorkerId(0))
            .unwrap_err();
        assert!(matches!(err, ModelError::ParseFailure(_)));
    }

    #[test]
    fn timeout_kills_the_child() {
        let mut m = model("sleep 5");
        m.timeout_secs = Some(0.1);
        let t = Instant::now();
        let err = run_concurrent_model(&m, &names(), &[0.0], key(), WorkerId(0)).unwrap_err();
        assert_eq!(err, ModelError::Timeout(0.1));
        assert!(t.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn signal_is_a_crash() {
        let err = run_concurrent_model(&model("sh -c 'kill -9 $$'"), &names(), &[0.0], key(), WorkerId(0))
            .unwrap_err();
        assert!(err.is_crash(), "{err:?}");
    }

    #[test]
    fn result_file_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out_{SampleId}.txt");
        let m = ModelSettings {
            command: format!("sh -c 'echo {{X}} > {}'", dir.path().join("out_17.txt").display()),
            channel: ResultChannel::File(path.display().to_string()),
            timeout_secs: None,
        };
        let r = run_concurrent_model(&m, &names(), &[1.5], key(), WorkerId(0)).unwrap();
        assert_eq!(r.real("F(x)").unwrap(), 1.5);
    }
}
