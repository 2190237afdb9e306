//! Code generation and feedback-driven repair.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskSpec;
use crate::fuzzing_agent::CrashReport;
use crate::llm::{extract_code_block, LlmClient, LlmError, TemplateId, TemplateSet};
use crate::static_agent::{Finding, StaticVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    StaticFix { round: u32 },
    FuzzFix { round: u32 },
}

/// One version of a task's code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCode {
    pub task_id: String,
    pub version: u32,
    pub source: String,
    pub provenance: Provenance,
}

impl CandidateCode {
    pub fn initial(task_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            version: 0,
            source: source.into(),
            provenance: Provenance::Initial,
        }
    }

    fn next(&self, source: String, provenance: Provenance) -> Self {
        Self {
            task_id: self.task_id.clone(),
            version: self.version + 1,
            source,
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodingError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("model reply contained no code")]
    EmptyGeneration,
    #[error("revision requested without feedback: {0}")]
    Precondition(&'static str),
}

fn lift(e: LlmError) -> CodingError {
    match e {
        LlmError::EmptyReply => CodingError::EmptyGeneration,
        other => CodingError::Llm(other),
    }
}

pub struct CodingAgent {
    llm: Arc<LlmClient>,
    templates: Arc<TemplateSet>,
}

impl CodingAgent {
    pub fn new(llm: Arc<LlmClient>, templates: Arc<TemplateSet>) -> Self {
        Self { llm, templates }
    }

    fn ask(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, CodingError> {
        let prompt = self.templates.render(id, bindings)?;
        let reply = self.llm.complete_prompt(prompt)?;
        extract_code_block(&reply).map_err(lift)
    }

    pub fn generate_code(&self, task: &TaskSpec) -> Result<CandidateCode, CodingError> {
        let imports = setup_imports_text(task);
        let source = self.ask(
            TemplateId::Codegen,
            &[
                ("requirements", &task.prompt),
                ("entry_point", &task.entry_point),
                ("setup_imports", &imports),
            ],
        )?;
        Ok(CandidateCode::initial(&task.id, source))
    }

    pub fn revise_with_static_feedback(
        &self,
        task: &TaskSpec,
        code: &CandidateCode,
        verdict: &StaticVerdict,
        round: u32,
    ) -> Result<CandidateCode, CodingError> {
        if verdict.secure || verdict.findings.is_empty() {
            return Err(CodingError::Precondition("verdict has no findings"));
        }
        let findings = format_findings(&verdict.findings);
        let source = self.ask(
            TemplateId::FixFromStatic,
            &[
                ("requirements", &task.prompt),
                ("entry_point", &task.entry_point),
                ("source", &code.source),
                ("findings", &findings),
            ],
        )?;
        Ok(code.next(source, Provenance::StaticFix { round }))
    }

    pub fn revise_with_fuzz_feedback(
        &self,
        task: &TaskSpec,
        code: &CandidateCode,
        crashes: &[CrashReport],
        round: u32,
    ) -> Result<CandidateCode, CodingError> {
        if crashes.is_empty() {
            return Err(CodingError::Precondition("crash list is empty"));
        }
        let crashes = format_crashes(crashes);
        let source = self.ask(
            TemplateId::FixFromFuzz,
            &[
                ("requirements", &task.prompt),
                ("entry_point", &task.entry_point),
                ("source", &code.source),
                ("crashes", &crashes),
            ],
        )?;
        Ok(code.next(source, Provenance::FuzzFix { round }))
    }
}

pub(crate) fn setup_imports_text(task: &TaskSpec) -> String {
    match &task.setup_imports {
        Some(m) if !m.is_empty() => m.join(", "),
        _ => "none specified".to_string(),
    }
}

pub fn format_findings(findings: &[Finding]) -> String {
    let mut out = String::new();
    for (i, f) in findings.iter().enumerate() {
        let _ = writeln!(out, "{}. {}: {}", i + 1, f.cwe_id, f.description.trim());
        let _ = writeln!(out, "   Remediation: {}", f.remediation.trim());
    }
    out.trim_end().to_string()
}

pub fn format_crashes(crashes: &[CrashReport]) -> String {
    let mut out = String::new();
    for (i, c) in crashes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "{}. input: {}", i + 1, c.input.args_json());
        let _ = writeln!(out, "   error class: {}", c.error_class);
        let _ = writeln!(out, "   error message:");
        for line in c.error_message.trim_end().lines() {
            let _ = writeln!(out, "   {line}");
        }
    }
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzing_agent::CrashReport;
    use crate::llm::{ChatRequest, ModelSettings, ScriptedBackend};
    use crate::mutation::{FuzzValue, InputTuple};
    use crate::sandbox::Classification;
    use std::sync::Mutex;

    fn agent(reply: &'static str, seen: Arc<Mutex<Vec<String>>>) -> CodingAgent {
        let backend = ScriptedBackend::new(move |r: &ChatRequest| {
            seen.lock().unwrap().push(r.prompt().to_string());
            Some(reply.to_string())
        });
        CodingAgent::new(
            Arc::new(LlmClient::new(backend, ModelSettings::default())),
            Arc::new(TemplateSet::builtin()),
        )
    }

    fn task() -> TaskSpec {
        TaskSpec::new("t1", "def inv(x):\n    '''Return 1/x.'''\n", "inv")
    }

    fn finding(cwe: &str) -> Finding {
        Finding {
            cwe_id: cwe.into(),
            description: "eval on user input".into(),
            remediation: "use ast.literal_eval".into(),
        }
    }

    fn crash(message: &str) -> CrashReport {
        CrashReport {
            input: InputTuple::seed(0, vec![FuzzValue::Int(0)]),
            classification: Classification::Crash,
            error_class: "ZeroDivisionError".into(),
            error_message: message.into(),
            iteration_found: 0,
            dedup_key: ("ZeroDivisionError".into(), "program.py:2".into()),
            mutation: None,
        }
    }

    #[test]
    fn generate_extracts_fenced_code() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let a = agent("Sure:\n```python\ndef inv(x):\n    return 1 / x\n```", seen.clone());
        let v0 = a.generate_code(&task()).unwrap();
        assert_eq!(v0.version, 0);
        assert_eq!(v0.provenance, Provenance::Initial);
        assert_eq!(v0.source, "def inv(x):\n    return 1 / x");
        assert!(seen.lock().unwrap()[0].contains("Return 1/x."));
        assert!(seen.lock().unwrap()[0].contains("none specified"));
    }

    #[test]
    fn prose_reply_becomes_source() {
        let a = agent("  I would rather not.  ", Arc::default());
        assert_eq!(a.generate_code(&task()).unwrap().source, "I would rather not.");
    }

    #[test]
    fn blank_reply_is_empty_generation() {
        let a = agent("```\n```", Arc::default());
        assert_eq!(a.generate_code(&task()).unwrap_err(), CodingError::EmptyGeneration);
    }

    #[test]
    fn replay_miss_propagates() {
        let a = CodingAgent::new(
            Arc::new(LlmClient::new(ScriptedBackend::new(|_: &ChatRequest| None), ModelSettings::default())),
            Arc::new(TemplateSet::builtin()),
        );
        assert!(matches!(a.generate_code(&task()), Err(CodingError::Llm(LlmError::ReplayMiss(_)))));
    }

    #[test]
    fn static_revisions_chain_versions() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let a = agent("```\ndef inv(x):\n    return 0\n```", seen.clone());
        let v0 = CandidateCode::initial("t1", "def inv(x):\n    return eval(x)");
        let verdict = StaticVerdict::insecure(vec![finding("CWE-94"), finding("CWE-95")]);
        let v1 = a.revise_with_static_feedback(&task(), &v0, &verdict, 1).unwrap();
        let v2 = a.revise_with_static_feedback(&task(), &v1, &verdict, 2).unwrap();
        assert_eq!((v1.version, v1.provenance), (1, Provenance::StaticFix { round: 1 }));
        assert_eq!((v2.version, v2.provenance), (2, Provenance::StaticFix { round: 2 }));
        assert_eq!(v0.version, 0, "earlier versions untouched");
        let prompt = seen.lock().unwrap()[0].clone();
        assert!(prompt.contains("return eval(x)"));
        assert!(prompt.contains("CWE-94") && prompt.contains("CWE-95"));
        assert!(prompt.contains("use ast.literal_eval"));
        assert_eq!(seen.lock().unwrap().len(), 2, "one prompt per round");
    }

    #[test]
    fn static_revision_needs_findings() {
        let a = agent("x", Arc::default());
        let v0 = CandidateCode::initial("t1", "x = 1");
        assert!(matches!(
            a.revise_with_static_feedback(&task(), &v0, &StaticVerdict::secure(), 1),
            Err(CodingError::Precondition(_))
        ));
    }

    #[test]
    fn fuzz_revision_keeps_multiline_errors() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let a = agent("```\ndef inv(x):\n    return 0 if x == 0 else 1 / x\n```", seen.clone());
        let v1 = CandidateCode::initial("t1", "def inv(x):\n    return 1 / x").next("def inv(x):\n    return 1 / x".into(), Provenance::StaticFix { round: 1 });
        let msg = "Traceback (most recent call last):\n  File \"program.py\", line 2, in inv\nZeroDivisionError: division by zero";
        let v2 = a.revise_with_fuzz_feedback(&task(), &v1, &[crash(msg)], 1).unwrap();
        assert_eq!((v2.version, v2.provenance), (2, Provenance::FuzzFix { round: 1 }));
        let prompt = seen.lock().unwrap()[0].clone();
        assert!(prompt.contains("input: [0]"));
        assert!(prompt.contains("error class: ZeroDivisionError"));
        for line in msg.lines() {
            assert!(prompt.contains(line), "missing {line:?}");
        }
        assert!(a.revise_with_fuzz_feedback(&task(), &v2, &[], 2).is_err());
    }
}
