//! Regenerates `fixtures/mini/replay.jsonl` by running the mini corpus
//! against a scripted model and recording every exchange.
//!
//! ```text
//! cargo run -p autosafe-core --example make_mini_fixtures
//! ```
//!
//! The fuzz-fix prompt embeds interpreter tracebacks, so the fixture is tied
//! to the traceback format of the `python3` used here.

use std::path::Path;
use std::sync::Arc;

use autosafe_core::llm::{ChatRequest, ModelSettings, ScriptedBackend, TemplateSet};
use autosafe_core::{load_corpus, CorpusFormat, LlmClient, Pipeline, PipelineConfig};

const ADD: &str = "def add_numbers(a, b):\n    return a + b\n";
const PARSE_EVAL: &str = "def parse_int(text):\n    try:\n        return int(eval(text))\n    except Exception:\n        return None\n";
const PARSE_SAFE: &str = "def parse_int(text):\n    try:\n        return int(text.strip())\n    except ValueError:\n        return None\n";
const INVERSE: &str = "def safe_inverse(x):\n    return 1 / x\n";
const INVERSE_FIXED: &str = "def safe_inverse(x):\n    if x == 0:\n        return 0.0\n    return 1 / x\n";
const FINGERPRINT: &str = "import hashlib\n\n\ndef fingerprint(data):\n    return hashlib.md5(data.encode('utf-8', 'surrogatepass')).hexdigest()\n";
const FINGERPRINT_RETRY: &str = "import hashlib\n\n\ndef fingerprint(data):\n    digest = hashlib.md5(usedforsecurity=False)\n    digest.update(data.encode('utf-8', 'surrogatepass'))\n    return digest.hexdigest()\n";
const REPORT: &str = "import autosafe_reporting_toolkit\n\n\ndef render_report(title):\n    return autosafe_reporting_toolkit.render(title)\n";

const SECURE: &str = "{\"secure\": true, \"findings\": []}";
const EVAL_FINDING: &str = "{\"secure\": false, \"findings\": [{\"cwe_id\": \"CWE-95\", \"description\": \"User text is passed to eval, which executes arbitrary expressions.\", \"remediation\": \"Parse the text with int() instead of evaluating it.\"}]}";
const MD5_FINDING: &str = "{\"secure\": false, \"findings\": [{\"cwe_id\": \"CWE-328\", \"description\": \"MD5 is a weak hash and collisions are practical.\", \"remediation\": \"Use hashlib.sha256.\"}]}";

fn fenced(source: &str) -> String {
    format!("```python\n{source}```\n")
}

fn audited_code(prompt: &str) -> &str {
    prompt.rsplit("```python\n").next().unwrap_or(prompt)
}

fn respond(request: &ChatRequest) -> Option<String> {
    let p = request.prompt();
    let names = ["add_numbers", "parse_int", "safe_inverse", "fingerprint", "render_report"];
    let task = names.into_iter().find(|n| p.contains(&format!("`{n}`")) || p.contains(&format!("def {n}(")))?;

    if p.contains("security auditor") {
        let code = audited_code(p);
        let verdict = if code.contains("eval(") {
            EVAL_FINDING
        } else if code.contains("md5") {
            MD5_FINDING
        } else {
            SECURE
        };
        return Some(verdict.to_string());
    }
    if p.contains("initial inputs for fuzzing") {
        let seeds = match task {
            "add_numbers" => "[[1, 2], [0, 0], [-5, 7]]",
            "safe_inverse" => "[[4], [0], [-3]]",
            _ => "[[\"42\"], [\"\"], [\"hello world\"]]",
        };
        return Some(format!("Seeds:\n{seeds}\n"));
    }
    if p.contains("fixing security weaknesses") {
        return Some(fenced(match task {
            "parse_int" => PARSE_SAFE,
            "fingerprint" => FINGERPRINT_RETRY,
            _ => return None,
        }));
    }
    if p.contains("fixing runtime failures") {
        return match task {
            "safe_inverse" => Some(fenced(INVERSE_FIXED)),
            _ => None,
        };
    }
    Some(fenced(match task {
        "add_numbers" => ADD,
        "parse_int" => PARSE_EVAL,
        "safe_inverse" => INVERSE,
        "fingerprint" => FINGERPRINT,
        _ => REPORT,
    }))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    let corpus = load_corpus(&dir.join("tasks.jsonl"), CorpusFormat::Native)?;
    let out = tempfile::tempdir()?;
    let llm = Arc::new(LlmClient::new(ScriptedBackend::new(respond), ModelSettings::default()));
    let config = PipelineConfig {
        output_dir: out.path().to_path_buf(),
        interpreter_cmd: vec!["python3".into(), "-S".into()],
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, llm.clone(), Arc::new(TemplateSet::builtin()));
    let report = pipeline.run_pipeline(&corpus)?;
    for t in &report.traces {
        println!("{:<20} {}", t.task_id, t.final_status.label());
    }
    llm.export_replay(&dir.join("replay.jsonl"))?;
    println!("{} exchanges recorded", llm.transcript().len());
    Ok(())
}
