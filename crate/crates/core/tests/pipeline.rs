mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use autosafe_core::llm::{ChatRequest, ModelSettings, ScriptedBackend, TemplateSet};
use autosafe_core::orchestrator::{load_traces, trace_file_stem, PipelineError};
use autosafe_core::{Corpus, CorpusFormat, FuzzConfig, LlmClient, Pipeline, PipelineConfig, TaskSpec, TaskStatus};

use common::*;

const SECURE: &str = r#"{"secure": true, "findings": []}"#;

/// Answers every prompt except code generation for `missing`.
fn backend(missing: &'static str, calls: Arc<AtomicUsize>) -> ScriptedBackend {
    ScriptedBackend::new(move |r: &ChatRequest| {
        calls.fetch_add(1, Ordering::SeqCst);
        let p = r.prompt();
        if p.contains("security auditor") {
            Some(SECURE.into())
        } else if p.contains("initial inputs for fuzzing") {
            Some("[[1], [2]]".into())
        } else if p.contains(&format!("`{missing}`")) {
            None
        } else if p.contains("`double`") {
            Some("```python\ndef double(x):\n    return 2 * x\n```".into())
        } else {
            Some("```python\ndef halve(x):\n    return x // 2\n```".into())
        }
    })
}

fn corpus() -> Corpus {
    let mut double = TaskSpec::new("t/double", "def double(x: int) -> int:\n    '''Twice x.'''\n", "double");
    double.functional_tests = Some("def check(candidate):\n    assert candidate(3) == 6\n".into());
    let halve = TaskSpec::new("t/halve", "def halve(x: int) -> int:\n    '''Half of x.'''\n", "halve");
    Corpus {
        tasks: vec![double, halve],
        source_path: "inline".into(),
        format: CorpusFormat::Native,
    }
}

fn config(out: &std::path::Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: out.to_path_buf(),
        interpreter_cmd: fast_python(),
        fuzz: FuzzConfig {
            budget: 4,
            ..FuzzConfig::default()
        },
        parallelism: 2,
        ..PipelineConfig::default()
    }
}

fn pipeline(missing: &'static str, out: &std::path::Path, calls: Arc<AtomicUsize>) -> Pipeline {
    let llm = Arc::new(LlmClient::new(backend(missing, calls), ModelSettings::default()));
    Pipeline::new(config(out), llm, Arc::new(TemplateSet::builtin()))
}

#[test]
fn a_failing_task_does_not_stop_the_others() {
    let out = tempfile::tempdir().unwrap();
    let report = pipeline("halve", out.path(), Arc::default()).run_pipeline(&corpus()).unwrap();
    assert_eq!(report.traces.len(), 2);
    assert_eq!(report.traces[0].final_status, TaskStatus::Completed);
    match &report.traces[1].final_status {
        TaskStatus::PipelineError(msg) => assert!(msg.starts_with("generation:"), "{msg}"),
        other => panic!("expected a pipeline error, got {other:?}"),
    }
    assert_eq!(report.summary.pipeline_errors, ["t/halve"]);
    assert_eq!(report.summary.static_fix_histogram.unable, 1);
}

#[test]
fn output_tree_layout() {
    let out = tempfile::tempdir().unwrap();
    let report = pipeline("none", out.path(), Arc::default()).run_pipeline(&corpus()).unwrap();
    for t in &report.traces {
        let stem = trace_file_stem(&t.task_id);
        assert!(out.path().join("traces").join(format!("{stem}.json")).is_file());
        assert!(out.path().join("crashes").join(format!("{stem}.jsonl")).is_file());
    }
    let summary = std::fs::read_to_string(out.path().join("summary.json")).unwrap();
    assert!(summary.ends_with("}\n"));
    assert!(out.path().join("timings.json").is_file());
    assert!(!out.path().join("replay.jsonl").exists(), "only live runs export a replay file");
    let trace = std::fs::read_to_string(out.path().join("traces").join(format!("{}.json", trace_file_stem("t/double")))).unwrap();
    assert!(!trace.contains("timings"));

    let loaded = load_traces(&out.path().join("traces")).unwrap();
    assert_eq!(loaded.len(), 2);
    let double = report.traces.iter().find(|t| t.task_id == "t/double").unwrap();
    let functional = double.functional.as_ref().unwrap();
    assert_eq!((functional.n, functional.passed), (1, 1));
    assert_eq!(report.summary.pass_at_k.as_ref().unwrap().values[&1], 1.0);
}

#[test]
fn resume_skips_finished_tasks() {
    let out = tempfile::tempdir().unwrap();
    let first = pipeline("none", out.path(), Arc::default()).run_pipeline(&corpus()).unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let llm = Arc::new(LlmClient::new(backend("none", calls.clone()), ModelSettings::default()));
    let resumed = Pipeline::new(
        PipelineConfig {
            resume: true,
            ..config(out.path())
        },
        llm,
        Arc::new(TemplateSet::builtin()),
    )
    .run_pipeline(&corpus())
    .unwrap();
    assert_eq!(resumed.resumed, ["t/double", "t/halve"]);
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert_eq!(
        serde_json::to_string(&first.summary).unwrap(),
        serde_json::to_string(&resumed.summary).unwrap()
    );
}

#[test]
fn extra_samples_feed_pass_at_k() {
    let out = tempfile::tempdir().unwrap();
    let llm = Arc::new(LlmClient::new(backend("none", Arc::default()), ModelSettings::default()));
    let report = Pipeline::new(
        PipelineConfig {
            n_samples: 3,
            ..config(out.path())
        },
        llm,
        Arc::new(TemplateSet::builtin()),
    )
    .run_pipeline(&corpus())
    .unwrap();
    let double = report.traces.iter().find(|t| t.task_id == "t/double").unwrap();
    assert_eq!(double.functional.as_ref().unwrap().n, 3);
    let pk = report.summary.pass_at_k.unwrap();
    assert_eq!((pk.n, pk.tasks_evaluated), (3, 1));
}

#[test]
fn unwritable_output_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "x").unwrap();
    let err = pipeline("none", &file, Arc::default()).run_pipeline(&corpus()).unwrap_err();
    assert!(matches!(err, PipelineError::OutputDirUnwritable { .. }), "{err:?}");
}
