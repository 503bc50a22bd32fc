//! Execution of solver scripts against MDD tables.
//!
//! The wire contract is one JSON request per line on the runner's stdin and
//! one JSON response per line on its stdout:
//! `{"script": .., "tables": {name: {"columns": [..], "rows": [[..]]}}, "timeout_ms": ..}`
//! answered by `{"status": "ok", "columns": [..], "rows": [..]}` or
//! `{"status": "error", "traceback": ".."}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use mdd_select_core::ResultSet;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SCRIPT_TIMEOUT_MS: u64 = 10_000;

/// MDD tables keyed by table name.
pub type MddTables = BTreeMap<String, ResultSet>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptOutcome {
    /// `Err` carries the traceback.
    pub result: Result<ResultSet, String>,
    pub elapsed_ms: u64,
}

impl ScriptOutcome {
    pub fn ok(rs: ResultSet) -> Self {
        ScriptOutcome { result: Ok(rs), elapsed_ms: 0 }
    }

    pub fn error(traceback: impl Into<String>) -> Self {
        ScriptOutcome { result: Err(traceback.into()), elapsed_ms: 0 }
    }
}

impl Serialize for ScriptOutcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            status: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            result: Option<&'a ResultSet>,
            #[serde(skip_serializing_if = "Option::is_none")]
            traceback: Option<&'a str>,
            elapsed_ms: u64,
        }
        let (status, result, traceback) = match &self.result {
            Ok(rs) => ("ok", Some(rs), None),
            Err(t) => ("error", None, Some(t.as_str())),
        };
        Wire { status, result, traceback, elapsed_ms: self.elapsed_ms }.serialize(s)
    }
}

/// Failures of the executor itself, as opposed to the script.
#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("cannot start script runner `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
}

pub trait ScriptExecutor: Send + Sync {
    fn execute(&self, script: &str, tables: &MddTables, timeout_ms: u64) -> Result<ScriptOutcome, ExecutorError>;
}

/// The request line sent to a runner. Keys are emitted in sorted order.
pub fn serialize_mdd_payload(script: &str, tables: &MddTables, timeout_ms: u64) -> String {
    #[derive(Serialize)]
    struct Payload<'a> {
        script: &'a str,
        tables: &'a MddTables,
        timeout_ms: u64,
    }
    serde_json::to_string(&Payload { script, tables, timeout_ms }).expect("payload serializes")
}

#[derive(Deserialize)]
struct RunnerResponse {
    status: String,
    #[serde(default)]
    columns: Option<Vec<String>>,
    #[serde(default)]
    rows: Option<serde_json::Value>,
    #[serde(default)]
    traceback: Option<String>,
}

/// Decodes one runner response line.
pub fn parse_runner_response(line: &str) -> Result<ResultSet, String> {
    let resp: RunnerResponse =
        serde_json::from_str(line).map_err(|e| format!("runner sent an unreadable response: {e}"))?;
    match resp.status.as_str() {
        "ok" => {
            let Some(rows) = resp.rows else {
                return Err("result is not a DataFrame: response has no rows".into());
            };
            let wire = serde_json::json!({ "columns": resp.columns, "rows": rows });
            serde_json::from_value::<ResultSet>(wire).map_err(|e| format!("result is not tabular: {e}"))
        }
        "error" => Err(resp.traceback.unwrap_or_else(|| "script failed without a traceback".into())),
        other => Err(format!("runner sent unknown status '{other}'")),
    }
}

/// Test double: canned outcomes by exact (trimmed) script text, plus the
/// echo forms `result = <table>` and `result = <table>.head(0)`.
#[derive(Default)]
pub struct MockExecutor {
    canned: BTreeMap<String, ScriptOutcome>,
    hanging: Vec<String>,
    runs: Mutex<Vec<String>>,
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_result(mut self, script: &str, rs: ResultSet) -> Self {
        self.canned.insert(script.trim().to_string(), ScriptOutcome::ok(rs));
        self
    }

    pub fn with_error(mut self, script: &str, traceback: &str) -> Self {
        self.canned.insert(script.trim().to_string(), ScriptOutcome::error(traceback));
        self
    }

    /// Scripts that behave as if they never finish.
    pub fn with_hang(mut self, script: &str) -> Self {
        self.hanging.push(script.trim().to_string());
        self
    }

    pub fn from_canned(canned: BTreeMap<String, CannedOutcome>) -> Self {
        let mut m = Self::new();
        for (script, c) in canned {
            m = match c {
                CannedOutcome::Ok { columns, rows } => {
                    let rs = serde_json::from_value(serde_json::json!({ "columns": columns, "rows": rows }))
                        .unwrap_or_else(|_| ResultSet::empty());
                    m.with_result(&script, rs)
                }
                CannedOutcome::Error { traceback } => m.with_error(&script, &traceback),
            };
        }
        m
    }

    pub fn runs(&self) -> Vec<String> {
        self.runs.lock().expect("mock executor poisoned").clone()
    }

    fn echo(script: &str, tables: &MddTables) -> Option<ScriptOutcome> {
        let rhs = script.strip_prefix("result")?.trim_start().strip_prefix('=')?.trim();
        let (name, head0) = match rhs.strip_suffix(".head(0)") {
            Some(n) => (n, true),
            None => (rhs, false),
        };
        let t = tables.get(name)?;
        Some(ScriptOutcome::ok(if head0 {
            ResultSet::new(t.columns().map(<[String]>::to_vec), Vec::new()).expect("no rows")
        } else {
            t.clone()
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CannedOutcome {
    Ok {
        #[serde(default)]
        columns: Option<Vec<String>>,
        rows: serde_json::Value,
    },
    Error {
        traceback: String,
    },
}

impl ScriptExecutor for MockExecutor {
    fn execute(&self, script: &str, tables: &MddTables, timeout_ms: u64) -> Result<ScriptOutcome, ExecutorError> {
        let key = script.trim();
        self.runs.lock().expect("mock executor poisoned").push(key.to_string());
        if self.hanging.iter().any(|h| h == key) {
            return Ok(ScriptOutcome { result: Err("timeout".into()), elapsed_ms: timeout_ms });
        }
        if let Some(o) = self.canned.get(key) {
            return Ok(o.clone());
        }
        Ok(Self::echo(key, tables).unwrap_or_else(|| {
            ScriptOutcome::error("NameError: the mock executor has no canned outcome for this script")
        }))
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client for a pool of long-lived runner child processes.
///
/// A runner that overruns its timeout is killed and replaced on next use.
pub struct ProcessExecutor {
    program: String,
    args: Vec<String>,
    slots: Vec<Mutex<Option<Worker>>>,
    next: AtomicUsize,
}

impl ProcessExecutor {
    pub fn new(program: impl Into<String>, args: Vec<String>, pool_size: usize) -> Self {
        ProcessExecutor {
            program: program.into(),
            args,
            slots: (0..pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
        }
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(cmd: &str, pool_size: usize) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect(), pool_size))
    }

    fn command_line(&self) -> String {
        std::iter::once(self.program.as_str()).chain(self.args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ")
    }

    fn spawn(&self) -> Result<Worker, ExecutorError> {
        let spawn_err = |source| ExecutorError::Spawn { command: self.command_line(), source };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, lines: rx })
    }
}

impl ScriptExecutor for ProcessExecutor {
    fn execute(&self, script: &str, tables: &MddTables, timeout_ms: u64) -> Result<ScriptOutcome, ExecutorError> {
        let slot = &self.slots[self.next.fetch_add(1, Ordering::Relaxed) % self.slots.len()];
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        let mut worker = match guard.take() {
            Some(w) => w,
            None => self.spawn()?,
        };
        let start = Instant::now();
        let elapsed = |s: Instant| s.elapsed().as_millis() as u64;
        let mut line = serialize_mdd_payload(script, tables, timeout_ms);
        line.push('\n');
        if let Err(e) = worker.stdin.write_all(line.as_bytes()).and_then(|_| worker.stdin.flush()) {
            worker.kill();
            return Ok(ScriptOutcome { result: Err(format!("script runner exited: {e}")), elapsed_ms: elapsed(start) });
        }
        // a small grace period lets a cooperative runner report its own timeout
        let wait = Duration::from_millis(timeout_ms) + Duration::from_millis((timeout_ms / 10).clamp(50, 1_000));
        match worker.lines.recv_timeout(wait) {
            Ok(Ok(resp)) => {
                *guard = Some(worker);
                Ok(ScriptOutcome { result: parse_runner_response(&resp), elapsed_ms: elapsed(start) })
            }
            Ok(Err(e)) => {
                worker.kill();
                Ok(ScriptOutcome { result: Err(format!("script runner output unreadable: {e}")), elapsed_ms: elapsed(start) })
            }
            Err(RecvTimeoutError::Timeout) => {
                worker.kill();
                Ok(ScriptOutcome { result: Err("timeout".into()), elapsed_ms: elapsed(start) })
            }
            Err(RecvTimeoutError::Disconnected) => {
                worker.kill();
                Ok(ScriptOutcome { result: Err("script runner exited without responding".into()), elapsed_ms: elapsed(start) })
            }
        }
    }
}

impl Drop for ProcessExecutor {
    fn drop(&mut self) {
        for slot in &self.slots {
            if let Some(w) = slot.lock().unwrap_or_else(|p| p.into_inner()).take() {
                w.kill();
            }
        }
    }
}
