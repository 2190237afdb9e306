//! Per-task pipeline and corpus runs.
//!
//! Each task goes generate → static loop → fuzz-fix loop, strictly in that
//! order; the static loop's result is fuzzed even when unresolved. Failures
//! inside a task end up in its trace and never stop the corpus run.
//!
//! Output layout under the output directory:
//!
//! ```text
//! traces/<task>.json     one TaskTrace each, written as tasks finish
//! crashes/<task>.jsonl   every crash report found for the task
//! summary.json           SummaryReport over all tasks
//! timings.json           wall-clock per phase (not reproducible)
//! replay.jsonl           transcript export, live backend only
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coding_agent::{CandidateCode, CodingAgent};
use crate::corpus::{Corpus, TaskSpec};
use crate::fuzzing_agent::{write_crashes_jsonl, FuzzConfig, FuzzLoopTrace, FuzzStatus, FuzzingAgent};
use crate::llm::{BackendTag, LlmClient, TemplateSet};
use crate::metrics::{summarize, SummaryReport};
use crate::rng::FuzzRng;
use crate::sandbox::{Classification, ProgramBundle, Sandbox, SandboxConfig, DEFAULT_TIMEOUT};
use crate::static_agent::{StaticAgent, StaticLoopTrace, DEFAULT_MAX_STATIC_ROUNDS};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_static_rounds: u32,
    pub fuzz: FuzzConfig,
    pub exec_timeout: Duration,
    pub rng_seed: u64,
    /// Concurrent tasks.
    pub parallelism: usize,
    pub interpreter_cmd: Vec<String>,
    pub output_dir: PathBuf,
    /// Reuse traces already present in the output directory.
    pub resume: bool,
    /// Samples per task for pass@k; each sample is a full pipeline pass.
    pub n_samples: usize,
    /// Skip fuzzing entirely (baseline runs).
    pub fuzz_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_static_rounds: DEFAULT_MAX_STATIC_ROUNDS,
            fuzz: FuzzConfig::default(),
            exec_timeout: DEFAULT_TIMEOUT,
            rng_seed: 0,
            parallelism: 1,
            interpreter_cmd: vec!["python3".to_string()],
            output_dir: PathBuf::from("autosafe-out"),
            resume: false,
            n_samples: 1,
            fuzz_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Completed,
    StaticUnresolved,
    FuzzUnfixed,
    SetupError,
    PipelineError(String),
}

impl TaskStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TaskStatus::Completed => "Completed",
            TaskStatus::StaticUnresolved => "StaticUnresolved",
            TaskStatus::FuzzUnfixed => "FuzzUnfixed",
            TaskStatus::SetupError => "SetupError",
            TaskStatus::PipelineError(_) => "PipelineError",
        }
    }

    pub fn is_pipeline_error(&self) -> bool {
        matches!(self, TaskStatus::PipelineError(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub generate_ms: u64,
    pub static_ms: u64,
    pub fuzz_ms: u64,
    pub functional_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalEval {
    pub n: usize,
    pub passed: usize,
    pub results: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task_id: String,
    pub code_versions: Vec<CandidateCode>,
    pub static_trace: Option<StaticLoopTrace>,
    pub fuzz_trace: Option<FuzzLoopTrace>,
    pub final_status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalEval>,
    /// Kept out of the serialized trace so traces stay reproducible; see
    /// `timings.json`.
    #[serde(skip)]
    pub timings: PhaseTimings,
}

impl TaskTrace {
    pub fn final_code(&self) -> Option<&CandidateCode> {
        self.code_versions.last()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("output directory {path} is not writable: {source}")]
    OutputDirUnwritable {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    /// In corpus order.
    pub traces: Vec<TaskTrace>,
    pub summary: SummaryReport,
    /// Ids whose traces were reused from a previous run.
    pub resumed: Vec<String>,
}

/// File stem for a task id: unsafe characters become `_`, and a short hash of
/// the original id is appended whenever anything was replaced.
pub fn trace_file_stem(task_id: &str) -> String {
    let mut stem: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if stem.starts_with('.') {
        stem.replace_range(..1, "_");
    }
    if stem != task_id || stem.is_empty() {
        let digest = Sha256::digest(task_id.as_bytes());
        let _ = write!(stem, "-{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3]);
    }
    stem
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

pub struct Pipeline {
    config: PipelineConfig,
    llm: Arc<LlmClient>,
    coder: CodingAgent,
    analyzer: StaticAgent,
    fuzzer: FuzzingAgent,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, llm: Arc<LlmClient>, templates: Arc<TemplateSet>) -> Self {
        let sandbox = Sandbox::new(SandboxConfig {
            interpreter_cmd: config.interpreter_cmd.clone(),
            timeout: config.exec_timeout,
            max_parallel: config.parallelism.max(1),
            ..SandboxConfig::default()
        });
        Self {
            coder: CodingAgent::new(llm.clone(), templates.clone()),
            analyzer: StaticAgent::new(llm.clone(), templates.clone()),
            fuzzer: FuzzingAgent::new(sandbox, config.fuzz.clone()).with_llm(llm.clone(), templates),
            llm,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn llm(&self) -> &LlmClient {
        &self.llm
    }

    /// Runs one task end to end. Never fails; problems become trace states.
    pub fn run_task(&self, task: &TaskSpec) -> TaskTrace {
        let mut trace = self.run_sample(task, &task.id);
        if let (Some(tests), false) = (&task.functional_tests, trace.final_status.is_pipeline_error()) {
            let started = Instant::now();
            let mut results = Vec::new();
            if let Some(code) = trace.final_code() {
                results.push(self.functional_pass(&code.source, task, tests));
            }
            for s in 1..self.config.n_samples {
                let sample = self.run_sample(task, &format!("{}#sample{s}", task.id));
                results.push(
                    sample
                        .final_code()
                        .is_some_and(|c| !sample.final_status.is_pipeline_error() && self.functional_pass(&c.source, task, tests)),
                );
            }
            trace.functional = Some(FunctionalEval {
                n: results.len(),
                passed: results.iter().filter(|r| **r).count(),
                results,
            });
            trace.timings.functional_ms = ms(started.elapsed());
        }
        trace
    }

    fn run_sample(&self, task: &TaskSpec, rng_key: &str) -> TaskTrace {
        let mut trace = TaskTrace {
            task_id: task.id.clone(),
            code_versions: Vec::new(),
            static_trace: None,
            fuzz_trace: None,
            final_status: TaskStatus::Completed,
            functional: None,
            timings: PhaseTimings::default(),
        };

        let started = Instant::now();
        let v0 = match self.coder.generate_code(task) {
            Ok(c) => c,
            Err(e) => {
                trace.final_status = TaskStatus::PipelineError(format!("generation: {e}"));
                return trace;
            }
        };
        trace.timings.generate_ms = ms(started.elapsed());
        trace.code_versions.push(v0.clone());

        let started = Instant::now();
        let mut history = Vec::new();
        let static_result =
            self.analyzer
                .static_loop_with_history(&self.coder, task, &v0, self.config.max_static_rounds, &mut history);
        trace.code_versions.append(&mut history);
        trace.timings.static_ms = ms(started.elapsed());
        let (code, static_trace) = match static_result {
            Ok(r) => r,
            Err(e) => {
                trace.final_status = TaskStatus::PipelineError(format!("static review: {e}"));
                return trace;
            }
        };
        let static_resolved = static_trace.resolved;
        trace.static_trace = Some(static_trace);

        let mut fuzz_status = None;
        if self.config.fuzz_enabled {
            let started = Instant::now();
            let mut rng = FuzzRng::for_task(self.config.rng_seed, rng_key);
            let (_, fuzz_trace) = self.fuzzer.fuzz_fix_loop(&self.coder, &code, task, &mut rng, &mut history);
            trace.code_versions.append(&mut history);
            trace.timings.fuzz_ms = ms(started.elapsed());
            if let Some(e) = &fuzz_trace.error {
                trace.final_status = TaskStatus::PipelineError(format!("fuzzing: {e}"));
                trace.fuzz_trace = Some(fuzz_trace);
                return trace;
            }
            fuzz_status = fuzz_trace.status;
            trace.fuzz_trace = Some(fuzz_trace);
        }

        trace.final_status = match fuzz_status {
            Some(FuzzStatus::SetupError) => TaskStatus::SetupError,
            Some(FuzzStatus::Unfixed) => TaskStatus::FuzzUnfixed,
            _ if !static_resolved => TaskStatus::StaticUnresolved,
            _ => TaskStatus::Completed,
        };
        trace
    }

    fn functional_pass(&self, source: &str, task: &TaskSpec, tests: &str) -> bool {
        let sandbox = self.fuzzer.sandbox();
        let Ok(bundle) = ProgramBundle::functional(source, task, tests, sandbox.config()) else {
            return false;
        };
        match sandbox.run(&bundle, "", sandbox.config().timeout) {
            Ok(r) => r.classification == Classification::Ok,
            Err(e) => {
                log::warn!("{}: functional tests could not run: {e}", task.id);
                false
            }
        }
    }

    /// Runs every task with bounded parallelism and writes the output tree.
    pub fn run_pipeline(&self, corpus: &Corpus) -> Result<PipelineReport, PipelineError> {
        let out = &self.config.output_dir;
        let traces_dir = out.join("traces");
        let crashes_dir = out.join("crashes");
        for dir in [out, &traces_dir, &crashes_dir] {
            fs::create_dir_all(dir).map_err(|source| PipelineError::OutputDirUnwritable {
                path: dir.display().to_string(),
                source,
            })?;
        }

        let n = corpus.tasks.len();
        let slots: Vec<Mutex<Option<TaskTrace>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let mut resumed = Vec::new();
        if self.config.resume {
            for (i, task) in corpus.tasks.iter().enumerate() {
                let path = traces_dir.join(format!("{}.json", trace_file_stem(&task.id)));
                let Ok(text) = fs::read_to_string(&path) else { continue };
                match serde_json::from_str::<TaskTrace>(&text) {
                    Ok(t) if t.task_id == task.id => {
                        *slots[i].lock().expect("slot") = Some(t);
                        resumed.push(task.id.clone());
                    }
                    _ => log::warn!("{}: ignoring unreadable trace {}", task.id, path.display()),
                }
            }
        }

        let next = AtomicUsize::new(0);
        let write_errors: Mutex<Vec<PipelineError>> = Mutex::new(Vec::new());
        let workers = self.config.parallelism.clamp(1, n.max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    if slots[i].lock().expect("slot").is_some() {
                        continue;
                    }
                    let task = &corpus.tasks[i];
                    log::info!("task {} ({}/{n}) started", task.id, i + 1);
                    let trace = self.run_task(task);
                    log::info!("task {} finished: {}", task.id, trace.final_status.label());
                    if let Err(e) = write_task_outputs(&traces_dir, &crashes_dir, &trace) {
                        write_errors.lock().expect("errors").push(e);
                    }
                    *slots[i].lock().expect("slot") = Some(trace);
                });
            }
        });
        if let Some(e) = write_errors.into_inner().expect("errors").into_iter().next() {
            return Err(e);
        }

        let traces: Vec<TaskTrace> = slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot").expect("every task ran"))
            .collect();
        let summary = summarize(&traces);
        write_json(&out.join("summary.json"), &summary)?;
        let timings: BTreeMap<&str, &PhaseTimings> = traces.iter().map(|t| (t.task_id.as_str(), &t.timings)).collect();
        write_json(&out.join("timings.json"), &timings)?;
        if self.llm.backend_tag() == BackendTag::Live {
            let path = out.join("replay.jsonl");
            self.llm.export_replay(&path).map_err(|source| PipelineError::Write {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(PipelineReport {
            traces,
            summary,
            resumed,
        })
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_task_outputs(traces_dir: &Path, crashes_dir: &Path, trace: &TaskTrace) -> Result<(), PipelineError> {
    let stem = trace_file_stem(&trace.task_id);
    write_json(&traces_dir.join(format!("{stem}.json")), trace)?;
    let path = crashes_dir.join(format!("{stem}.jsonl"));
    let crashes = trace.fuzz_trace.iter().flat_map(|f| f.all_crashes());
    write_crashes_jsonl(&path, crashes).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Loads every `*.json` trace in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> io::Result<Vec<TaskTrace>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
        })
        .collect()
}
