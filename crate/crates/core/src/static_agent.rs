//! LLM static review and the bounded review/repair loop.
//!
//! The analyzer is asked for a strict JSON verdict:
//!
//! ```json
//! {"secure": false, "findings": [{"cwe_id": "CWE-78", "description": "...", "remediation": "..."}]}
//! ```
//!
//! `secure` must be true exactly when `findings` is empty. The object may sit
//! inside a code fence or prose; the first `{` that starts a parseable JSON
//! object is taken.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coding_agent::{CandidateCode, CodingAgent, CodingError};
use crate::corpus::TaskSpec;
use crate::llm::{LlmClient, LlmError, TemplateId, TemplateSet};

pub const DEFAULT_MAX_STATIC_ROUNDS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub cwe_id: String,
    pub description: String,
    pub remediation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticVerdict {
    pub secure: bool,
    pub findings: Vec<Finding>,
    pub raw_reply: String,
}

impl StaticVerdict {
    pub fn secure() -> Self {
        Self {
            secure: true,
            findings: Vec::new(),
            raw_reply: String::new(),
        }
    }

    pub fn insecure(findings: Vec<Finding>) -> Self {
        Self {
            secure: findings.is_empty(),
            findings,
            raw_reply: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("unusable analyzer verdict: {reason}")]
pub struct VerdictParseError {
    pub reason: String,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StaticError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] VerdictParseError),
    #[error(transparent)]
    Coding(#[from] CodingError),
}

fn is_cwe_id(s: &str) -> bool {
    s.strip_prefix("CWE-")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

fn first_object(reply: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

pub fn parse_verdict(reply: &str) -> Result<StaticVerdict, VerdictParseError> {
    let fail = |reason: String| VerdictParseError {
        reason,
        raw_reply: reply.to_string(),
    };
    let obj = first_object(reply).ok_or_else(|| fail("no JSON object in reply".into()))?;
    let secure = obj
        .get("secure")
        .and_then(Value::as_bool)
        .ok_or_else(|| fail("`secure` must be a boolean".into()))?;
    let items = obj
        .get("findings")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("`findings` must be an array".into()))?;
    let mut findings = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let field = |name: &str| {
            item.get(name)
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| fail(format!("finding {i}: `{name}` must be a string")))
        };
        let cwe_id = field("cwe_id")?;
        if !is_cwe_id(&cwe_id) {
            return Err(fail(format!("finding {i}: {cwe_id:?} is not of the form CWE-<digits>")));
        }
        findings.push(Finding {
            cwe_id,
            description: field("description")?,
            remediation: field("remediation")?,
        });
    }
    if secure != findings.is_empty() {
        return Err(fail(format!(
            "`secure` is {secure} but {} finding(s) were listed",
            findings.len()
        )));
    }
    Ok(StaticVerdict {
        secure,
        findings,
        raw_reply: reply.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticLoopTrace {
    /// Fix prompts issued.
    pub rounds_used: u32,
    pub max_rounds: u32,
    pub verdicts: Vec<StaticVerdict>,
    pub resolved: bool,
    pub initial_version: u32,
    pub final_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<VerdictParseError>,
}

pub struct StaticAgent {
    llm: Arc<LlmClient>,
    templates: Arc<TemplateSet>,
}

impl StaticAgent {
    pub fn new(llm: Arc<LlmClient>, templates: Arc<TemplateSet>) -> Self {
        Self { llm, templates }
    }

    pub fn analyze(&self, code: &CandidateCode) -> Result<StaticVerdict, StaticError> {
        let prompt = self
            .templates
            .render(TemplateId::StaticAnalyze, &[("source", &code.source)])?;
        let reply = self.llm.complete_prompt(prompt)?;
        Ok(parse_verdict(&reply)?)
    }

    pub fn static_loop(
        &self,
        coder: &CodingAgent,
        task: &TaskSpec,
        code: &CandidateCode,
        max_rounds: u32,
    ) -> Result<(CandidateCode, StaticLoopTrace), StaticError> {
        self.static_loop_with_history(coder, task, code, max_rounds, &mut Vec::new())
    }

    /// Like [`static_loop`](Self::static_loop), appending every revision it
    /// produces to `history`.
    pub fn static_loop_with_history(
        &self,
        coder: &CodingAgent,
        task: &TaskSpec,
        code: &CandidateCode,
        max_rounds: u32,
        history: &mut Vec<CandidateCode>,
    ) -> Result<(CandidateCode, StaticLoopTrace), StaticError> {
        let mut current = code.clone();
        let mut trace = StaticLoopTrace {
            rounds_used: 0,
            max_rounds,
            verdicts: Vec::new(),
            resolved: false,
            initial_version: code.version,
            final_version: code.version,
            parse_failure: None,
        };
        loop {
            let verdict = match self.analyze(&current) {
                Ok(v) => v,
                Err(StaticError::Parse(e)) => {
                    log::warn!("{}: analyzer reply unusable: {}", task.id, e.reason);
                    trace.parse_failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            };
            let secure = verdict.secure;
            trace.verdicts.push(verdict);
            if secure {
                trace.resolved = true;
                break;
            }
            if trace.rounds_used >= max_rounds {
                break;
            }
            trace.rounds_used += 1;
            let last = trace.verdicts.last().expect("just pushed");
            current = coder.revise_with_static_feedback(task, &current, last, trace.rounds_used)?;
            history.push(current.clone());
        }
        trace.final_version = current.version;
        Ok((current, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatRequest, ModelSettings, ScriptedBackend};

    #[test]
    fn parses_secure_and_insecure() {
        let v = parse_verdict(r#"{"secure": true, "findings": []}"#).unwrap();
        assert!(v.secure && v.findings.is_empty());
        let v = parse_verdict(
            r#"{"secure": false, "findings": [{"cwe_id": "CWE-798", "description": "hard-coded password", "remediation": "read it from the environment"}]}"#,
        )
        .unwrap();
        assert!(!v.secure);
        assert_eq!(v.findings[0].cwe_id, "CWE-798");
    }

    #[test]
    fn fenced_object_with_prose() {
        let reply = "Review below.\n```json\n{\"secure\": true, \"findings\": [], \"notes\": \"ok\"}\n```\n";
        let v = parse_verdict(reply).unwrap();
        assert!(v.secure);
        assert_eq!(v.raw_reply, reply);
    }

    #[test]
    fn skips_braces_that_do_not_parse() {
        let reply = "use {braces} carefully: {\"secure\": true, \"findings\": []}";
        assert!(parse_verdict(reply).unwrap().secure);
    }

    #[test]
    fn rejects_nonconforming_replies() {
        for bad in [
            "looks fine to me",
            r#"{"secure": "yes", "findings": []}"#,
            r#"{"secure": true}"#,
            r#"{"secure": true, "findings": [{"cwe_id": "CWE-1", "description": "d", "remediation": "r"}]}"#,
            r#"{"secure": false, "findings": []}"#,
            r#"{"secure": false, "findings": [{"cwe_id": "XSS", "description": "d", "remediation": "r"}]}"#,
            r#"{"secure": false, "findings": [{"cwe_id": "CWE-", "description": "d", "remediation": "r"}]}"#,
            r#"{"secure": false, "findings": [{"cwe_id": "CWE-79", "description": "d"}]}"#,
        ] {
            let err = parse_verdict(bad).unwrap_err();
            assert_eq!(err.raw_reply, bad);
        }
    }

    const INSECURE: &str = r#"{"secure": false, "findings": [{"cwe_id": "CWE-94", "description": "eval", "remediation": "avoid eval"}]}"#;
    const SECURE: &str = r#"{"secure": true, "findings": []}"#;

    /// Analyzer answers from `verdicts` in order (the last one repeats); the
    /// coder always returns a fixed function.
    fn agents(verdicts: Vec<&'static str>) -> (StaticAgent, CodingAgent, Arc<LlmClient>) {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let backend = ScriptedBackend::new(move |r: &ChatRequest| {
            if r.prompt().contains("security reviewer") || r.prompt().contains("\"secure\"") {
                let i = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Some(verdicts[i.min(verdicts.len() - 1)].to_string())
            } else {
                Some("```python\ndef f(x):\n    return x\n```".to_string())
            }
        });
        let llm = Arc::new(LlmClient::new(backend, ModelSettings::default()));
        let t = Arc::new(TemplateSet::builtin());
        (StaticAgent::new(llm.clone(), t.clone()), CodingAgent::new(llm.clone(), t), llm)
    }

    fn counts(llm: &LlmClient) -> (usize, usize) {
        let t = llm.transcript();
        let analyses = t.iter().filter(|e| e.request.prompt().contains("\"secure\"")).count();
        (analyses, t.len() - analyses)
    }

    fn v0() -> CandidateCode {
        CandidateCode::initial("t", "def f(x):\n    return eval(x)")
    }

    fn task() -> TaskSpec {
        TaskSpec::new("t", "def f(x):\n    '''Parse x.'''", "f")
    }

    #[test]
    fn secure_at_once() {
        let (s, c, llm) = agents(vec![SECURE]);
        let (code, trace) = s.static_loop(&c, &task(), &v0(), 4).unwrap();
        assert_eq!((trace.rounds_used, trace.resolved), (0, true));
        assert_eq!(code, v0());
        assert_eq!(counts(&llm), (1, 0));
    }

    #[test]
    fn secure_after_one_fix() {
        let (s, c, _) = agents(vec![INSECURE, SECURE]);
        let (code, trace) = s.static_loop(&c, &task(), &v0(), 4).unwrap();
        assert_eq!((trace.rounds_used, trace.resolved), (1, true));
        assert_eq!(code.version, 1);
        assert_eq!(trace.final_version - trace.initial_version, trace.rounds_used);
    }

    #[test]
    fn never_secure_is_bounded() {
        let (s, c, llm) = agents(vec![INSECURE]);
        let mut history = Vec::new();
        let (code, trace) = s.static_loop_with_history(&c, &task(), &v0(), 4, &mut history).unwrap();
        assert_eq!((trace.rounds_used, trace.resolved), (4, false));
        assert_eq!(trace.verdicts.len(), 5);
        assert_eq!(counts(&llm), (5, 4));
        assert_eq!(code.version, 4);
        assert_eq!(history.iter().map(|c| c.version).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn zero_rounds_only_analyzes() {
        let (s, c, llm) = agents(vec![INSECURE]);
        let (_, trace) = s.static_loop(&c, &task(), &v0(), 0).unwrap();
        assert_eq!((trace.rounds_used, trace.resolved), (0, false));
        assert_eq!(counts(&llm), (1, 0));
    }

    #[test]
    fn parse_failure_stops_the_loop() {
        let (s, c, llm) = agents(vec![INSECURE, "no idea"]);
        let (code, trace) = s.static_loop(&c, &task(), &v0(), 4).unwrap();
        assert!(!trace.resolved);
        assert_eq!(trace.rounds_used, 1);
        assert_eq!(trace.parse_failure.as_ref().unwrap().raw_reply, "no idea");
        assert_eq!(code.version, 1);
        assert_eq!(counts(&llm), (2, 1));
    }
}
