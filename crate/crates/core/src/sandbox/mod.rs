//! Program assembly and isolated execution.
//!
//! A [`ProgramBundle`] is one Python file: a small prelude, the sliced
//! candidate, and the harness main that reads a JSON argument array from
//! stdin and calls the entry point. [`Sandbox::execute`] runs a bundle in a
//! fresh temporary directory with a scrubbed environment, kills its whole
//! process group at the wall-clock limit, and classifies the exit.
//!
//! Harness exit codes: 0 success, 1 the function raised, 2 setup failure
//! (bad stdin, arity mismatch, import or syntax failure before the call).

mod exec;
mod slice;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coding_agent::CandidateCode;
use crate::corpus::TaskSpec;
use crate::mutation::InputTuple;

pub use exec::{Hardening, RawOutcome, Sandbox};
pub use slice::{extract_function, FunctionUnit};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CRASH: i32 = 1;
pub const EXIT_SETUP: i32 = 2;

/// Bytes of stderr kept per execution.
pub const STDERR_TAIL_BYTES: usize = 8 * 1024;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(6);

const PRELUDE: &str = include_str!("../../assets/harness/prelude.py");
const HARNESS: &str = include_str!("../../assets/harness/harness.py");
pub(crate) const BOOTSTRAP: &str = include_str!("../../assets/harness/bootstrap.py");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SliceError {
    #[error("entry point `{0}` is not defined at top level")]
    EntryPointNotFound(String),
    #[error("cannot parse candidate (line {line}): {message}")]
    SyntaxUnparseable { line: usize, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("cannot launch interpreter `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sandbox I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty interpreter command")]
    NoInterpreter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Ok,
    Crash,
    Timeout,
    SetupError,
}

impl Classification {
    /// Total mapping from a finished process to a class. `code` is `None` when
    /// the process died from a signal.
    pub fn from_exit(code: Option<i32>, timed_out: bool) -> Self {
        if timed_out {
            return Classification::Timeout;
        }
        match code {
            Some(EXIT_OK) => Classification::Ok,
            Some(EXIT_SETUP) | Some(126) | Some(127) => Classification::SetupError,
            Some(_) | None => Classification::Crash,
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Classification::Crash | Classification::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub classification: Classification,
    /// `None` on timeout or signal death.
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<i32>,
    pub stderr_tail: String,
    pub duration_ms: u64,
    pub input: InputTuple,
}

/// A complete runnable program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramBundle {
    pub source: String,
    pub entry_point: String,
    /// Parent directory for per-run scratch directories.
    pub workdir: PathBuf,
    pub interpreter_cmd: Vec<String>,
}

fn join_sections(unit: &FunctionUnit, tail: &str) -> String {
    let mut out = String::new();
    for f in &unit.future_imports {
        out.push_str(f);
        out.push('\n');
    }
    if !unit.future_imports.is_empty() {
        out.push('\n');
    }
    out.push_str(PRELUDE.trim_end());
    out.push_str("\n\n\n");
    out.push_str(&unit.body);
    out.push_str("\n\n\n");
    out.push_str(tail.trim_end());
    out.push('\n');
    out
}

/// The harness main for `entry_point`.
pub fn harness_main(entry_point: &str) -> String {
    HARNESS.replace("{{entry_point}}", entry_point)
}

/// Candidate slice followed by the harness main.
pub fn assemble_source(candidate: &str, entry_point: &str) -> Result<String, SliceError> {
    let unit = extract_function(candidate, entry_point)?;
    Ok(join_sections(&unit, &harness_main(entry_point)))
}

/// Candidate slice followed by the task's test text and a `check(entry)` call,
/// for functional evaluation. Passing means exit 0.
pub fn assemble_functional_source(candidate: &str, entry_point: &str, tests: &str) -> Result<String, SliceError> {
    let unit = extract_function(candidate, entry_point)?;
    let tail = format!("{}\n\n\ncheck({entry_point})\n", tests.trim_end());
    Ok(join_sections(&unit, &tail))
}

impl ProgramBundle {
    pub fn assemble(code: &CandidateCode, task: &TaskSpec, config: &SandboxConfig) -> Result<Self, SliceError> {
        Self::from_source(&code.source, &task.entry_point, config)
    }

    pub fn from_source(candidate: &str, entry_point: &str, config: &SandboxConfig) -> Result<Self, SliceError> {
        Ok(Self {
            source: assemble_source(candidate, entry_point)?,
            entry_point: entry_point.to_string(),
            workdir: config.scratch_root(),
            interpreter_cmd: config.interpreter_cmd.clone(),
        })
    }

    /// A bundle that runs the task's functional tests instead of the harness.
    pub fn functional(candidate: &str, task: &TaskSpec, tests: &str, config: &SandboxConfig) -> Result<Self, SliceError> {
        Ok(Self {
            source: assemble_functional_source(candidate, &task.entry_point, tests)?,
            entry_point: task.entry_point.clone(),
            workdir: config.scratch_root(),
            interpreter_cmd: config.interpreter_cmd.clone(),
        })
    }
}

/// Convenience wrapper matching the pipeline's vocabulary.
pub fn assemble_program(code: &CandidateCode, task: &TaskSpec, config: &SandboxConfig) -> Result<ProgramBundle, SliceError> {
    ProgramBundle::assemble(code, task, config)
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub interpreter_cmd: Vec<String>,
    pub timeout: Duration,
    /// Concurrent executions allowed across all users of one [`Sandbox`].
    pub max_parallel: usize,
    /// Where run directories are created; the system temp dir when `None`.
    pub scratch_dir: Option<PathBuf>,
    /// Variables copied from the parent environment; everything else is dropped.
    pub env_allowlist: Vec<String>,
    pub hardening: Option<Hardening>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter_cmd: vec!["python3".to_string()],
            timeout: DEFAULT_TIMEOUT,
            max_parallel: std::thread::available_parallelism().map_or(4, |n| n.get()),
            scratch_dir: None,
            env_allowlist: ["PATH", "LANG", "LC_ALL", "LC_CTYPE", "SYSTEMROOT", "TZ"]
                .into_iter()
                .map(String::from)
                .collect(),
            hardening: None,
        }
    }
}

impl SandboxConfig {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_interpreter(mut self, cmd: Vec<String>) -> Self {
        self.interpreter_cmd = cmd;
        self
    }

    fn scratch_root(&self) -> PathBuf {
        self.scratch_dir.clone().unwrap_or_else(std::env::temp_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_table() {
        use Classification::*;
        assert_eq!(Classification::from_exit(Some(0), false), Ok);
        assert_eq!(Classification::from_exit(Some(1), false), Crash);
        assert_eq!(Classification::from_exit(Some(2), false), SetupError);
        assert_eq!(Classification::from_exit(Some(127), false), SetupError);
        assert_eq!(Classification::from_exit(Some(3), false), Crash);
        assert_eq!(Classification::from_exit(None, false), Crash);
        assert_eq!(Classification::from_exit(Some(0), true), Timeout);
        assert_eq!(Classification::from_exit(None, true), Timeout);
    }

    #[test]
    fn bundle_has_one_harness_main() {
        let src = assemble_source("import os\n\ndef add(a, b):\n    return a + b\n", "add").unwrap();
        assert_eq!(src.matches("def _autosafe_main").count(), 1);
        assert!(src.contains("_AUTOSAFE_ENTRY = \"add\""));
        let prelude = src.find("_autosafe_setup_failure").unwrap();
        let candidate = src.find("def add").unwrap();
        let main = src.find("def _autosafe_main").unwrap();
        assert!(prelude < candidate && candidate < main);
    }

    #[test]
    fn future_import_leads_the_file() {
        let src = assemble_source("from __future__ import annotations\ndef f(x: int):\n    return x\n", "f").unwrap();
        assert!(src.starts_with("from __future__ import annotations\n"));
    }

    #[test]
    fn unparseable_candidate() {
        assert!(matches!(
            assemble_source("def f(:\n", "f"),
            Err(SliceError::SyntaxUnparseable { .. }) | Err(SliceError::EntryPointNotFound(_))
        ));
        assert!(matches!(
            assemble_source("I cannot help with that.", "f"),
            Err(SliceError::EntryPointNotFound(_)) | Err(SliceError::SyntaxUnparseable { .. })
        ));
    }

    #[test]
    fn functional_source_calls_check() {
        let src = assemble_functional_source(
            "def inc(x):\n    return x + 1\n",
            "inc",
            "def check(candidate):\n    assert candidate(1) == 2\n",
        )
        .unwrap();
        assert!(src.trim_end().ends_with("check(inc)"));
        assert!(!src.contains("_autosafe_main"));
    }
}
