//! Seed generation, the mutation/execution loop, and the fuzz-fix loop.
//!
//! `fuzz` runs every seed once, then `budget` mutation iterations. Each
//! iteration mutates the next tuple of a round-robin pool (all seeds plus
//! every mutated tuple that ran cleanly) and executes the result. Crashes
//! and timeouts become [`CrashReport`]s, deduplicated by error class and
//! innermost stack frame. A setup failure on a seed aborts the run.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coding_agent::{CandidateCode, CodingAgent};
use crate::corpus::TaskSpec;
use crate::llm::{LlmClient, LlmError, TemplateId, TemplateSet};
use crate::mutation::{infer_types, mutate_tuple, InputTuple, MutationRecord, TypeSignature};
use crate::rng::FuzzRng;
use crate::sandbox::{Classification, ExecutionResult, ProgramBundle, Sandbox, SandboxError};

pub const DEFAULT_BUDGET: usize = 150;
pub const DEFAULT_MAX_FUZZ_ROUNDS: u32 = 3;
pub const DEFAULT_SEED_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub budget: usize,
    pub max_fuzz_rounds: u32,
    pub seed_count: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            max_fuzz_rounds: DEFAULT_MAX_FUZZ_ROUNDS,
            seed_count: DEFAULT_SEED_COUNT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no usable seeds from the model and no parameter types for `{0}`")]
    NoTypesAvailable(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub input: InputTuple,
    pub classification: Classification,
    /// Exception class, `timeout`, or `signal N` / `exit N` without a traceback.
    pub error_class: String,
    pub error_message: String,
    /// 0 for the seed stage, otherwise the 1-based mutation iteration.
    pub iteration_found: usize,
    /// (error class, innermost frame as `file:line in function`).
    pub dedup_key: (String, String),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<MutationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    pub executions_run: usize,
    pub crashes: Vec<CrashReport>,
    pub clean: bool,
    pub seeds_used: usize,
    pub setup_error: bool,
    /// Why setup failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_detail: Option<String>,
    /// Mutated inputs that hit a setup failure; not crashes.
    #[serde(default)]
    pub setup_failures_in_mutation: usize,
}

impl FuzzOutcome {
    fn setup(executions_run: usize, seeds_used: usize, crashes: Vec<CrashReport>, detail: String) -> Self {
        Self {
            executions_run,
            crashes,
            clean: false,
            seeds_used,
            setup_error: true,
            setup_detail: Some(detail),
            setup_failures_in_mutation: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FuzzStatus {
    NoCrash,
    Fixed,
    Unfixed,
    SetupError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FuzzEvent {
    Fuzz {
        round: u32,
        version: u32,
        outcome: FuzzOutcome,
    },
    Fix {
        round: u32,
        from_version: u32,
        to_version: u32,
    },
    Regression {
        round: u32,
        version: u32,
        inputs: usize,
        passed: bool,
        still_failing: Vec<CrashReport>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzLoopTrace {
    pub seeds: Vec<InputTuple>,
    pub events: Vec<FuzzEvent>,
    /// `None` when the loop stopped on an error.
    pub status: Option<FuzzStatus>,
    pub rounds_used: u32,
    pub initial_version: u32,
    pub final_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FuzzLoopTrace {
    /// Every crash report from every fuzz run, in event order.
    pub fn all_crashes(&self) -> impl Iterator<Item = &CrashReport> {
        self.events.iter().flat_map(|e| match e {
            FuzzEvent::Fuzz { outcome, .. } => outcome.crashes.as_slice(),
            _ => &[],
        })
    }
}

/// Class name from the last line of a Python traceback.
pub fn error_class_of(stderr: &str) -> Option<String> {
    let last = stderr.lines().rev().find(|l| !l.trim().is_empty())?.trim();
    let head = last.split(':').next().unwrap_or(last).trim();
    let ok = !head.is_empty()
        && head.split('.').all(crate::python::is_identifier)
        && !head.contains(' ');
    ok.then(|| head.to_string())
}

/// Innermost `File "...", line N, in F` frame, as `file:N in F`.
pub fn top_frame(stderr: &str) -> Option<String> {
    stderr.lines().rev().find_map(|l| {
        let rest = l.trim_start().strip_prefix("File \"")?;
        let (file, rest) = rest.split_once("\", line ")?;
        let (line, func) = match rest.split_once(", in ") {
            Some((n, f)) => (n, f.trim()),
            None => (rest.trim(), ""),
        };
        Some(format!("{file}:{line} in {func}"))
    })
}

pub fn crash_report(result: &ExecutionResult, iteration: usize, limit_ms: u64) -> CrashReport {
    let (error_class, error_message) = match result.classification {
        Classification::Timeout => ("timeout".to_string(), format!("execution exceeded the {limit_ms} ms limit")),
        _ => {
            let class = error_class_of(&result.stderr_tail).unwrap_or_else(|| match (result.signal, result.exit_code) {
                (Some(s), _) => format!("signal {s}"),
                (None, Some(c)) => format!("exit {c}"),
                (None, None) => "unknown".to_string(),
            });
            (class, result.stderr_tail.trim_end().to_string())
        }
    };
    let frame = match result.classification {
        Classification::Timeout => String::new(),
        _ => top_frame(&result.stderr_tail).unwrap_or_default(),
    };
    CrashReport {
        input: result.input.clone(),
        classification: result.classification,
        dedup_key: (error_class.clone(), frame),
        error_class,
        error_message,
        iteration_found: iteration,
        mutation: None,
    }
}

/// Writes crash reports as JSONL.
pub fn write_crashes_jsonl<'a>(path: &Path, crashes: impl IntoIterator<Item = &'a CrashReport>) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for c in crashes {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// First JSON array in `reply` whose elements are argument arrays.
fn parse_seed_reply(reply: &str) -> Vec<InputTuple> {
    for (i, _) in reply.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if !items.iter().all(Value::is_array) {
                continue;
            }
            return items
                .iter()
                .filter_map(|v| InputTuple::from_args_json(0, v).ok())
                .collect();
        }
    }
    Vec::new()
}

/// Keeps the seeds consistent with `hint` (when given) or with each other,
/// renumbering them in order.
pub fn select_seeds(candidates: Vec<InputTuple>, hint: Option<&TypeSignature>) -> Vec<InputTuple> {
    let mut kept: Vec<InputTuple> = Vec::new();
    for c in candidates {
        let c = match hint {
            Some(sig) => match sig.coerce(c) {
                Some(c) => c,
                None => continue,
            },
            None => c,
        };
        kept.push(c);
        if hint.is_none() && infer_types(&kept).is_err() {
            kept.pop();
        }
    }
    for (i, s) in kept.iter_mut().enumerate() {
        *s = InputTuple::seed(i, std::mem::take(&mut s.args));
    }
    kept
}

struct Regression {
    passed: bool,
    still_failing: Vec<CrashReport>,
}

pub struct FuzzingAgent {
    sandbox: Sandbox,
    config: FuzzConfig,
    llm: Option<(Arc<LlmClient>, Arc<TemplateSet>)>,
}

impl FuzzingAgent {
    /// An agent without an LLM: seeds come from parameter types only.
    pub fn new(sandbox: Sandbox, config: FuzzConfig) -> Self {
        Self {
            sandbox,
            config,
            llm: None,
        }
    }

    pub fn with_llm(mut self, llm: Arc<LlmClient>, templates: Arc<TemplateSet>) -> Self {
        self.llm = Some((llm, templates));
        self
    }

    pub fn config(&self) -> &FuzzConfig {
        &self.config
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    fn limit_ms(&self) -> u64 {
        self.sandbox.config().timeout.as_millis() as u64
    }

    pub fn generate_seeds(&self, task: &TaskSpec) -> Result<Vec<InputTuple>, FuzzError> {
        let hint = task.param_types.clone().map(TypeSignature);
        let mut seeds = Vec::new();
        if let Some((llm, templates)) = &self.llm {
            let types = match &hint {
                Some(sig) if sig.arity() > 0 => sig.0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
                Some(_) => "no parameters".to_string(),
                None => "unknown".to_string(),
            };
            let count = self.config.seed_count.to_string();
            let prompt = templates.render(
                TemplateId::SeedGen,
                &[
                    ("seed_count", &count),
                    ("entry_point", &task.entry_point),
                    ("param_types", &types),
                    ("requirements", &task.prompt),
                ],
            )?;
            let reply = llm.complete_prompt(prompt)?;
            seeds = select_seeds(parse_seed_reply(&reply), hint.as_ref());
        }
        if seeds.is_empty() {
            match &hint {
                Some(sig) => seeds.push(sig.default_tuple(0)),
                None => return Err(FuzzError::NoTypesAvailable(task.entry_point.clone())),
            }
        }
        Ok(seeds)
    }

    /// One fuzzing campaign over `code`.
    pub fn fuzz(
        &self,
        code: &CandidateCode,
        task: &TaskSpec,
        seeds: &[InputTuple],
        budget: usize,
        rng: &mut FuzzRng,
    ) -> Result<FuzzOutcome, FuzzError> {
        self.fuzz_source(&code.source, &task.entry_point, seeds, budget, rng)
    }

    pub fn fuzz_source(
        &self,
        source: &str,
        entry_point: &str,
        seeds: &[InputTuple],
        budget: usize,
        rng: &mut FuzzRng,
    ) -> Result<FuzzOutcome, FuzzError> {
        let bundle = match ProgramBundle::from_source(source, entry_point, self.sandbox.config()) {
            Ok(b) => b,
            Err(e) => return Ok(FuzzOutcome::setup(0, 0, Vec::new(), e.to_string())),
        };
        let zero_arity = seeds.is_empty() || seeds.iter().all(|s| s.arity() == 0);
        let seeds: Vec<InputTuple> = if zero_arity {
            vec![InputTuple::seed(0, Vec::new())]
        } else {
            seeds.to_vec()
        };
        let limit_ms = self.limit_ms();

        let mut executions = 0;
        let mut crashes = Vec::new();
        let mut seen = HashSet::new();
        let mut record = |report: CrashReport, crashes: &mut Vec<CrashReport>| {
            if seen.insert(report.dedup_key.clone()) {
                crashes.push(report);
            }
        };

        for seed in &seeds {
            let result = self.sandbox.execute(&bundle, seed)?;
            executions += 1;
            match result.classification {
                Classification::SetupError => {
                    let detail = result.stderr_tail.trim_end().to_string();
                    return Ok(FuzzOutcome::setup(executions, seeds.len(), crashes, detail));
                }
                c if c.is_failure() => record(crash_report(&result, 0, limit_ms), &mut crashes),
                _ => {}
            }
        }

        let mut setup_failures = 0;
        if !zero_arity {
            let mut pool = seeds.clone();
            for iteration in 1..=budget {
                let parent = &pool[(iteration - 1) % pool.len()];
                let (child, mutation) = mutate_tuple(parent, rng, iteration).expect("pool tuples have arity >= 1");
                let result = self.sandbox.execute(&bundle, &child)?;
                executions += 1;
                match result.classification {
                    Classification::Ok => pool.push(child),
                    Classification::SetupError => setup_failures += 1,
                    _ => {
                        let mut report = crash_report(&result, iteration, limit_ms);
                        report.mutation = Some(mutation);
                        record(report, &mut crashes);
                    }
                }
            }
        }

        Ok(FuzzOutcome {
            executions_run: executions,
            clean: crashes.is_empty(),
            crashes,
            seeds_used: seeds.len(),
            setup_error: false,
            setup_detail: None,
            setup_failures_in_mutation: setup_failures,
        })
    }

    /// True iff every input now runs cleanly.
    pub fn regression_check(
        &self,
        code: &CandidateCode,
        failing_inputs: &[InputTuple],
        task: &TaskSpec,
    ) -> Result<bool, FuzzError> {
        Ok(self.regression(code, failing_inputs, task)?.passed)
    }

    fn regression(&self, code: &CandidateCode, inputs: &[InputTuple], task: &TaskSpec) -> Result<Regression, FuzzError> {
        let bundle = match ProgramBundle::assemble(code, task, self.sandbox.config()) {
            Ok(b) => b,
            Err(_) => {
                return Ok(Regression {
                    passed: false,
                    still_failing: Vec::new(),
                })
            }
        };
        let mut passed = true;
        let mut still_failing = Vec::new();
        for input in inputs {
            let result = self.sandbox.execute(&bundle, input)?;
            if result.classification != Classification::Ok {
                passed = false;
            }
            if result.classification.is_failure() {
                still_failing.push(crash_report(&result, 0, self.limit_ms()));
            }
        }
        Ok(Regression { passed, still_failing })
    }

    /// Fuzz, repair, re-check, and re-fuzz until clean or out of rounds.
    /// Errors end the loop and are recorded in the trace.
    pub fn fuzz_fix_loop(
        &self,
        coder: &CodingAgent,
        code: &CandidateCode,
        task: &TaskSpec,
        rng: &mut FuzzRng,
        history: &mut Vec<CandidateCode>,
    ) -> (CandidateCode, FuzzLoopTrace) {
        let mut trace = FuzzLoopTrace {
            seeds: Vec::new(),
            events: Vec::new(),
            status: None,
            rounds_used: 0,
            initial_version: code.version,
            final_version: code.version,
            error: None,
        };
        let mut current = code.clone();
        if let Err(e) = self.run_fix_loop(coder, &mut current, task, rng, history, &mut trace) {
            log::warn!("{}: fuzz loop stopped: {e}", task.id);
            trace.status = None;
            trace.error = Some(e);
        }
        trace.final_version = current.version;
        (current, trace)
    }

    fn run_fix_loop(
        &self,
        coder: &CodingAgent,
        current: &mut CandidateCode,
        task: &TaskSpec,
        rng: &mut FuzzRng,
        history: &mut Vec<CandidateCode>,
        trace: &mut FuzzLoopTrace,
    ) -> Result<(), String> {
        let seeds = self.generate_seeds(task).map_err(|e| e.to_string())?;
        trace.seeds = seeds.clone();
        let budget = self.config.budget;

        let outcome = self
            .fuzz(current, task, &seeds, budget, rng)
            .map_err(|e| e.to_string())?;
        let (clean, setup) = (outcome.clean, outcome.setup_error);
        let mut crashes = outcome.crashes.clone();
        trace.events.push(FuzzEvent::Fuzz {
            round: 0,
            version: current.version,
            outcome,
        });
        if setup {
            trace.status = Some(FuzzStatus::SetupError);
            return Ok(());
        }
        if clean {
            trace.status = Some(FuzzStatus::NoCrash);
            return Ok(());
        }

        let mut failing: Vec<InputTuple> = Vec::new();
        let mut failing_keys: HashSet<String> = HashSet::new();
        let mut remember = |cs: &[CrashReport], failing: &mut Vec<InputTuple>| {
            for c in cs {
                if failing_keys.insert(c.input.args_json()) {
                    failing.push(c.input.clone());
                }
            }
        };
        remember(&crashes, &mut failing);

        for round in 1..=self.config.max_fuzz_rounds {
            trace.rounds_used = round;
            let revised = coder
                .revise_with_fuzz_feedback(task, current, &crashes, round)
                .map_err(|e| e.to_string())?;
            trace.events.push(FuzzEvent::Fix {
                round,
                from_version: current.version,
                to_version: revised.version,
            });
            *current = revised;
            history.push(current.clone());

            let reg = self.regression(current, &failing, task).map_err(|e| e.to_string())?;
            trace.events.push(FuzzEvent::Regression {
                round,
                version: current.version,
                inputs: failing.len(),
                passed: reg.passed,
                still_failing: reg.still_failing.clone(),
            });
            if !reg.passed {
                // With only setup failures left, the previous crash list is
                // still the best description of what to fix.
                if !reg.still_failing.is_empty() {
                    crashes = reg.still_failing;
                }
                continue;
            }

            let outcome = self
                .fuzz(current, task, &seeds, budget, rng)
                .map_err(|e| e.to_string())?;
            let (clean, setup) = (outcome.clean, outcome.setup_error);
            let new_crashes = outcome.crashes.clone();
            trace.events.push(FuzzEvent::Fuzz {
                round,
                version: current.version,
                outcome,
            });
            if clean {
                trace.status = Some(FuzzStatus::Fixed);
                return Ok(());
            }
            if setup {
                break;
            }
            remember(&new_crashes, &mut failing);
            crashes = new_crashes;
        }
        trace.status = Some(FuzzStatus::Unfixed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{FuzzKind, FuzzValue};

    const TRACEBACK: &str = "Traceback (most recent call last):\n  File \"<string>\", line 14, in <module>\n  File \"program.py\", line 40, in _autosafe_main\n  File \"program.py\", line 17, in inv\nZeroDivisionError: division by zero\n";

    #[test]
    fn traceback_fields() {
        assert_eq!(error_class_of(TRACEBACK).as_deref(), Some("ZeroDivisionError"));
        assert_eq!(top_frame(TRACEBACK).as_deref(), Some("program.py:17 in inv"));
        assert_eq!(error_class_of("json.decoder.JSONDecodeError: Expecting value").as_deref(), Some("json.decoder.JSONDecodeError"));
        assert_eq!(error_class_of("KeyboardInterrupt").as_deref(), Some("KeyboardInterrupt"));
        assert_eq!(error_class_of("Segmentation fault (core dumped)"), None);
        assert_eq!(error_class_of(""), None);
    }

    fn result(class: Classification, stderr: &str, code: Option<i32>, signal: Option<i32>) -> ExecutionResult {
        ExecutionResult {
            classification: class,
            exit_code: code,
            signal,
            stderr_tail: stderr.into(),
            duration_ms: 12,
            input: InputTuple::seed(0, vec![FuzzValue::Int(0)]),
        }
    }

    #[test]
    fn crash_reports() {
        let r = crash_report(&result(Classification::Crash, TRACEBACK, Some(1), None), 7, 6000);
        assert_eq!(r.error_class, "ZeroDivisionError");
        assert_eq!(r.dedup_key, ("ZeroDivisionError".into(), "program.py:17 in inv".into()));
        assert_eq!(r.iteration_found, 7);
        assert!(r.error_message.ends_with("division by zero"));

        let t = crash_report(&result(Classification::Timeout, "partial", None, None), 3, 6000);
        assert_eq!(t.error_class, "timeout");
        assert_eq!(t.error_message, "execution exceeded the 6000 ms limit");
        assert_eq!(t.dedup_key, ("timeout".into(), String::new()));

        let s = crash_report(&result(Classification::Crash, "", None, Some(11)), 1, 6000);
        assert_eq!(s.error_class, "signal 11");
    }

    #[test]
    fn seed_reply_parsing() {
        let seeds = parse_seed_reply("Here you go: [[1, \"a\"], [0, \"\"]]");
        assert_eq!(seeds.len(), 2);
        assert!(seeds.iter().all(|s| s.arity() == 2));
        assert!(parse_seed_reply("garbage").is_empty());
        assert!(parse_seed_reply("[]").is_empty());
        assert_eq!(parse_seed_reply("see [1] then [[true]]").len(), 1);
    }

    #[test]
    fn seed_selection() {
        let raw = parse_seed_reply("[[1], [2.5], [\"x\"], [1, 2]]");
        let kept = select_seeds(raw.clone(), None);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1].label(), "seed-1");
        let sig = TypeSignature(vec![FuzzKind::Float]);
        let kept = select_seeds(raw, Some(&sig));
        assert_eq!(kept.iter().map(|s| s.args[0].clone()).collect::<Vec<_>>(), vec![FuzzValue::Float(1.0), FuzzValue::Float(2.5)]);
    }

    #[test]
    fn fallback_and_missing_types() {
        let agent = FuzzingAgent::new(Sandbox::new(Default::default()), FuzzConfig::default());
        let mut task = TaskSpec::new("t", "p", "f");
        assert!(matches!(agent.generate_seeds(&task), Err(FuzzError::NoTypesAvailable(_))));
        task.param_types = Some(vec![FuzzKind::Int]);
        let seeds = agent.generate_seeds(&task).unwrap();
        assert_eq!(seeds, vec![InputTuple::seed(0, vec![FuzzValue::Int(0)])]);
    }
}
