//! Task corpora.
//!
//! Three on-disk shapes are understood, each either as JSONL or as one JSON
//! array of objects:
//!
//! * native: `id`, `prompt`, `entry_point`, `param_types`, `setup_imports`,
//!   `functional_tests`;
//! * SecurityEval-like: `ID`, `Prompt`; the entry point is the last function
//!   defined in the prompt;
//! * HumanEval-like: `task_id`, `prompt`, `entry_point`, `test`.
//!
//! Fields not consumed by the adapter are kept in [`TaskSpec::extras`] and
//! written back out as top-level fields in native form.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::mutation::FuzzKind;
use crate::python;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub prompt: String,
    pub entry_point: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_types: Option<Vec<FuzzKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_imports: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_tests: Option<String>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, entry_point: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            entry_point: entry_point.into(),
            param_types: None,
            setup_imports: None,
            functional_tests: None,
            extras: Map::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    SecurityEvalLike,
    HumanEvalLike,
    Native,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(Self::Native),
            "security-eval-like" | "security-eval" | "securityeval" => Ok(Self::SecurityEvalLike),
            "human-eval-like" | "human-eval" | "humaneval" => Ok(Self::HumanEvalLike),
            other => Err(format!(
                "unknown corpus format {other:?} (expected native, security-eval-like, human-eval-like)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub tasks: Vec<TaskSpec>,
    pub source_path: String,
    pub format: CorpusFormat,
}

impl Corpus {
    /// Native JSONL, one task per line.
    pub fn to_native_jsonl(&self) -> String {
        self.tasks
            .iter()
            .map(|t| serde_json::to_string(t).expect("task serializes") + "\n")
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("reading {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {index}: field {field:?} {reason}")]
    Schema {
        index: usize,
        field: String,
        reason: String,
    },
    #[error("record {index}: duplicate task id {id:?}")]
    DuplicateId { index: usize, id: String },
    #[error("record {index}: {}", join_violations(.violations))]
    InvalidTask {
        index: usize,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyPrompt,
    InvalidEntryPoint(String),
    ParamArityMismatch { hinted: usize, declared: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => f.write_str("empty task id"),
            Violation::EmptyPrompt => f.write_str("empty prompt"),
            Violation::InvalidEntryPoint(e) => write!(f, "entry point {e:?} is not a valid identifier"),
            Violation::ParamArityMismatch { hinted, declared } => write!(
                f,
                "param_types lists {hinted} types but the prompt signature declares {declared} parameters"
            ),
        }
    }
}

/// Checks a task's invariants. With `strict`, `param_types` must also agree
/// with the positional parameter count of the entry point's signature when
/// the prompt contains one.
pub fn validate_task(task: &TaskSpec, strict: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if task.prompt.trim().is_empty() {
        out.push(Violation::EmptyPrompt);
    }
    if !python::is_identifier(&task.entry_point) {
        out.push(Violation::InvalidEntryPoint(task.entry_point.clone()));
    }
    if strict {
        if let (Some(types), Some(params)) = (
            &task.param_types,
            python::positional_params(&task.prompt, &task.entry_point),
        ) {
            if types.len() != params.len() {
                out.push(Violation::ParamArityMismatch {
                    hinted: types.len(),
                    declared: params.len(),
                });
            }
        }
    }
    out
}

/// Loads and validates a corpus. The file may be JSONL or a single JSON
/// array; an empty file is an empty corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CorpusError::FileNotFound(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let tasks = parse_corpus(&text, format)?;
    Ok(Corpus {
        tasks,
        source_path: path.display().to_string(),
        format,
    })
}

/// [`load_corpus`] over in-memory text.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<TaskSpec>, CorpusError> {
    let records = read_records(text)?;
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let task = match format {
            CorpusFormat::Native => from_native(index, record)?,
            CorpusFormat::SecurityEvalLike => from_security_eval(index, record)?,
            CorpusFormat::HumanEvalLike => from_human_eval(index, record)?,
        };
        let violations = validate_task(&task, false);
        if !violations.is_empty() {
            return Err(CorpusError::InvalidTask { index, violations });
        }
        if !seen.insert(task.id.clone()) {
            return Err(CorpusError::DuplicateId { index, id: task.id });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

fn read_records(text: &str) -> Result<Vec<Map<String, Value>>, CorpusError> {
    let as_object = |value: Value, line: usize| match value {
        Value::Object(map) => Ok(map),
        _ => Err(CorpusError::Parse {
            line,
            message: "record is not a JSON object".into(),
        }),
    };
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let Value::Array(items) = value else {
            unreachable!("text starts with '['")
        };
        return items.into_iter().map(|v| as_object(v, 1)).collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(as_object(value, i + 1)?);
    }
    Ok(out)
}

fn take_string(
    index: usize,
    map: &mut Map<String, Value>,
    key: &str,
    field: &str,
) -> Result<Option<String>, CorpusError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(schema(index, field, "must be a string")),
    }
}

fn require_string(
    index: usize,
    map: &mut Map<String, Value>,
    key: &str,
    field: &str,
) -> Result<String, CorpusError> {
    take_string(index, map, key, field)?.ok_or_else(|| schema(index, field, "is missing"))
}

fn schema(index: usize, field: &str, reason: &str) -> CorpusError {
    CorpusError::Schema {
        index,
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn take_string_list(
    index: usize,
    map: &mut Map<String, Value>,
    key: &str,
) -> Result<Option<Vec<String>>, CorpusError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(schema(index, key, "must be a list of strings")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(schema(index, key, "must be a list of strings")),
    }
}

fn take_param_types(index: usize, map: &mut Map<String, Value>) -> Result<Option<Vec<FuzzKind>>, CorpusError> {
    let Some(names) = take_string_list(index, map, "param_types")? else {
        return Ok(None);
    };
    names
        .iter()
        .map(|n| {
            n.parse::<FuzzKind>()
                .map_err(|e| schema(index, "param_types", &e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn from_native(index: usize, mut map: Map<String, Value>) -> Result<TaskSpec, CorpusError> {
    Ok(TaskSpec {
        id: require_string(index, &mut map, "id", "id")?,
        prompt: require_string(index, &mut map, "prompt", "prompt")?,
        entry_point: require_string(index, &mut map, "entry_point", "entry_point")?,
        param_types: take_param_types(index, &mut map)?,
        setup_imports: take_string_list(index, &mut map, "setup_imports")?,
        functional_tests: take_string(index, &mut map, "functional_tests", "functional_tests")?,
        extras: map,
    })
}

fn from_security_eval(index: usize, mut map: Map<String, Value>) -> Result<TaskSpec, CorpusError> {
    let id = require_string(index, &mut map, "ID", "ID")?;
    let prompt = require_string(index, &mut map, "Prompt", "Prompt")?;
    let entry_point = last_function_name(&prompt)
        .ok_or_else(|| schema(index, "entry_point", "cannot be derived: prompt defines no function"))?;
    Ok(TaskSpec {
        id,
        prompt,
        entry_point,
        param_types: take_param_types(index, &mut map)?,
        setup_imports: take_string_list(index, &mut map, "setup_imports")?,
        functional_tests: None,
        extras: map,
    })
}

fn from_human_eval(index: usize, mut map: Map<String, Value>) -> Result<TaskSpec, CorpusError> {
    Ok(TaskSpec {
        id: require_string(index, &mut map, "task_id", "task_id")?,
        prompt: require_string(index, &mut map, "prompt", "prompt")?,
        entry_point: require_string(index, &mut map, "entry_point", "entry_point")?,
        param_types: take_param_types(index, &mut map)?,
        setup_imports: take_string_list(index, &mut map, "setup_imports")?,
        functional_tests: take_string(index, &mut map, "test", "test")?,
        extras: map,
    })
}

/// Name in the last `def NAME(` line of `src`, scanning line by line so an
/// incomplete prompt body does not matter.
fn last_function_name(src: &str) -> Option<String> {
    src.lines().rev().find_map(|line| {
        let t = line.trim_start();
        let t = t.strip_prefix("async ").map(str::trim_start).unwrap_or(t);
        let rest = t.strip_prefix("def ")?.trim_start();
        let name: String = rest
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect();
        let after = rest[name.len()..].trim_start();
        (python::is_identifier(&name) && after.starts_with('(')).then_some(name)
    })
}
