#![allow(dead_code)]

use std::time::Duration;

use autosafe_core::sandbox::SandboxConfig;
use autosafe_core::Sandbox;

/// Interpreter for tests; `AUTOSAFE_TEST_PYTHON` overrides `python3`.
pub fn python() -> Vec<String> {
    std::env::var("AUTOSAFE_TEST_PYTHON")
        .unwrap_or_else(|_| "python3".to_string())
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Same interpreter without site initialization; starts about twice as fast.
pub fn fast_python() -> Vec<String> {
    let mut cmd = python();
    cmd.push("-S".to_string());
    cmd
}

pub fn sandbox(limit: Duration) -> Sandbox {
    Sandbox::new(SandboxConfig::default().with_interpreter(python()).with_timeout(limit))
}

pub fn fast_sandbox(limit: Duration) -> Sandbox {
    Sandbox::new(SandboxConfig::default().with_interpreter(fast_python()).with_timeout(limit))
}

pub struct Canned {
    pub name: &'static str,
    pub source: &'static str,
    pub entry: &'static str,
    pub stdin: &'static str,
}

pub const CLEAN: &str = "def f(x):\n    return x + 1\n";
pub const RAISES: &str = "def f(x):\n    return 1 / x\n";
pub const BAD_IMPORT: &str = "import autosafe_no_such_module\n\n\ndef f(x):\n    return autosafe_no_such_module.go(x)\n";
pub const SPINS: &str = "def f(x):\n    while True:\n        x += 1\n";
pub const TWO_ARGS: &str = "def f(a, b):\n    return a + b\n";

/// Clean exit, uncaught exception, import failure, bad stdin, infinite loop,
/// arity mismatch.
pub fn six_programs() -> Vec<Canned> {
    vec![
        Canned { name: "clean exit", source: CLEAN, entry: "f", stdin: "[1]\n" },
        Canned { name: "uncaught exception", source: RAISES, entry: "f", stdin: "[0]\n" },
        Canned { name: "import failure", source: BAD_IMPORT, entry: "f", stdin: "[1]\n" },
        Canned { name: "bad stdin", source: CLEAN, entry: "f", stdin: "not-json\n" },
        Canned { name: "infinite loop", source: SPINS, entry: "f", stdin: "[1]\n" },
        Canned { name: "arity mismatch", source: TWO_ARGS, entry: "f", stdin: "[1]\n" },
    ]
}

pub fn fixtures() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Runs the bundled mini corpus from its replay file into `out`.
pub fn run_mini(
    parallelism: usize,
    out: &std::path::Path,
) -> Result<autosafe_core::orchestrator::PipelineReport, autosafe_core::orchestrator::PipelineError> {
    use autosafe_core::llm::{ModelSettings, ReplayBackend, TemplateSet};
    use autosafe_core::{load_corpus, CorpusFormat, LlmClient, Pipeline, PipelineConfig};
    use std::sync::Arc;

    let dir = fixtures().join("mini");
    let corpus = load_corpus(&dir.join("tasks.jsonl"), CorpusFormat::Native).expect("mini corpus");
    let backend = ReplayBackend::from_file(&dir.join("replay.jsonl")).expect("mini replay");
    let llm = Arc::new(LlmClient::new(backend, ModelSettings::default()));
    let config = PipelineConfig {
        parallelism,
        output_dir: out.to_path_buf(),
        interpreter_cmd: fast_python(),
        ..PipelineConfig::default()
    };
    Pipeline::new(config, llm, Arc::new(TemplateSet::builtin())).run_pipeline(&corpus)
}

/// Every file under `dir` except timings, keyed by relative path.
pub fn output_files(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timings.json") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}
