//! Subprocess evaluators.
//!
//! One process per trial. The request is written to stdin as a single JSON
//! line `{"trial_id": n, "params": {...}}`; the process answers with one JSON
//! object `{"metrics": {...}, "status": "ok"|"failed", "message": "..."}` on
//! stdout (`status` and `message` optional) and exits with code 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evaluation::{EvalRequest, EvalResult, EvalStatus, Evaluator};

const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Deserialize)]
struct Response {
    #[serde(default)]
    metrics: BTreeMap<String, f64>,
    #[serde(default)]
    status: Option<EvalStatus>,
    #[serde(default)]
    message: Option<String>,
}

/// Interprets an evaluator's stdout against the expected metric names.
///
/// Metrics not listed in `expected` are ignored.
pub fn parse_response(stdout: &str, expected: &[String]) -> EvalResult {
    let response: Response = match serde_json::from_str(stdout.trim()) {
        Ok(r) => r,
        Err(e) => return EvalResult::failed(format!("malformed evaluator output: {e}")),
    };
    if response.status == Some(EvalStatus::Failed) {
        return EvalResult::failed(
            response
                .message
                .unwrap_or_else(|| "evaluator reported failure".into()),
        );
    }
    let mut metrics = BTreeMap::new();
    for name in expected {
        match response.metrics.get(name) {
            Some(v) if v.is_finite() => {
                metrics.insert(name.clone(), *v);
            }
            Some(v) => return EvalResult::failed(format!("metric `{name}` is not finite ({v})")),
            None => {
                return EvalResult::failed(format!("evaluator output is missing metric `{name}`"))
            }
        }
    }
    let mut result = EvalResult::ok(metrics);
    result.message = response.message;
    result
}

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    /// Metric names that must be present in every successful response.
    pub expected_metrics: Vec<String>,
}

impl ExternalEvaluator {
    pub fn new(
        command: Vec<String>,
        timeout: Duration,
        expected_metrics: Vec<String>,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("evaluator command is empty".into()));
        }
        if timeout.is_zero() {
            return Err(Error::Config("evaluator timeout must be positive".into()));
        }
        Ok(Self {
            command,
            timeout,
            expected_metrics,
        })
    }

    fn spawn(&self) -> Result<Child> {
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            // own process group; kill_tree signals the whole group
            cmd.process_group(0);
        }
        cmd.spawn().map_err(|e| {
            Error::EvaluatorUnavailable(format!("cannot start `{}`: {e}", self.command.join(" ")))
        })
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult> {
        let start = Instant::now();
        let mut child = self.spawn()?;

        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        let stdin = child.stdin.take();
        let writer = thread::spawn(move || {
            if let Some(mut s) = stdin {
                // the evaluator may exit without reading; a broken pipe is fine
                let _ = s.write_all(line.as_bytes());
            }
        });
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());

        let deadline = start + self.timeout;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    kill_tree(&mut child);
                    let _ = child.wait();
                    break None;
                }
                None => thread::sleep(POLL_INTERVAL),
            }
        };
        let _ = writer.join();
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();

        let mut result = match status {
            None => EvalResult::failed(format!(
                "evaluator timed out after {:.3} s",
                self.timeout.as_secs_f64()
            )),
            Some(s) if !s.success() => {
                let mut r = EvalResult::failed(format!("evaluator exited with {s}"));
                if let Some(m) = parse_response(&out, &[]).message {
                    r.message = Some(format!("evaluator exited with {s}: {m}"));
                }
                r
            }
            Some(_) => parse_response(&out, &self.expected_metrics),
        };
        result.duration = start.elapsed().as_secs_f64();
        result.stderr = err;
        Ok(result)
    }
}
