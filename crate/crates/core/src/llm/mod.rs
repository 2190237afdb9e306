//! Chat-completion access for the agents.
//!
//! [`LlmClient`] owns the model settings, forwards requests to a
//! [`ChatBackend`], and keeps a transcript of every exchange so a live session
//! can be exported as a replay file. Requests are identified by the SHA-256 of
//! their canonical JSON form; replay only answers exact digest matches.

mod extract;
mod live;
mod replay;
pub mod template;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use extract::extract_code_block;
pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use replay::{read_replay_file, write_replay_file, ReplayBackend, ReplayEntry, ScriptedBackend};
pub use template::{render_prompt, TemplateId, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transport error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Transport { message: String, retryable: bool },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("replay file: {0}")]
    ReplayFile(String),
    #[error("template placeholder {{{{{0}}}}} has no binding")]
    MissingBinding(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("reply contains no code")]
    EmptyReply,
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Content hash of the canonical request; stable under key order.
    pub fn digest(&self) -> String {
        canonical_digest(&serde_json::to_value(self).expect("request serializes"))
    }

    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn write(out: &mut String, v: &Value) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(out, &map[k]);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(out, item);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(&mut out, value);
    out
}

pub fn canonical_digest(value: &Value) -> String {
    let digest = Sha256::digest(canonical_json(value).as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Live,
    Replay,
    Scripted,
}

/// One request/response pair as seen by the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response: String,
    pub backend: BackendTag,
    pub request_digest: String,
}

pub trait ChatBackend: Send + Sync {
    fn tag(&self) -> BackendTag;

    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o".to_string(),
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

pub struct LlmClient {
    backend: Box<dyn ChatBackend>,
    settings: ModelSettings,
    transcript: Mutex<Vec<ChatExchange>>,
}

impl LlmClient {
    pub fn new(backend: impl ChatBackend + 'static, settings: ModelSettings) -> Self {
        Self {
            backend: Box::new(backend),
            settings,
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    pub fn backend_tag(&self) -> BackendTag {
        self.backend.tag()
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            messages,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        }
    }

    /// Sends one user prompt with the configured settings.
    pub fn complete_prompt(&self, prompt: impl Into<String>) -> Result<String, LlmError> {
        self.complete(&self.request(vec![ChatMessage::user(prompt)]))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let digest = request.digest();
        let response = self.backend.complete(request, &digest)?;
        self.transcript
            .lock()
            .expect("transcript lock poisoned")
            .push(ChatExchange {
                request: request.clone(),
                response: response.clone(),
                backend: self.backend.tag(),
                request_digest: digest,
            });
        Ok(response)
    }

    pub fn transcript(&self) -> Vec<ChatExchange> {
        self.transcript.lock().expect("transcript lock poisoned").clone()
    }

    /// Writes the transcript as a replay file.
    pub fn export_replay(&self, path: &Path) -> std::io::Result<()> {
        write_replay_file(path, &self.transcript())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("hello")],
            temperature: 0.0,
            max_tokens: 16,
        }
    }

    #[test]
    fn digest_is_hex_sha256() {
        let d = sample().digest();
        assert_eq!(d.len(), 64);
        assert!(d.chars().all(|c| c.is_ascii_hexdigit()));
        let mut other = sample();
        other.temperature = 0.5;
        assert_ne!(other.digest(), d);
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b": 1, "a": {"d": [1, {"z": 0, "y": 1}], "c": "x"}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":"x","d":[1,{"y":1,"z":0}]},"b":1}"#);
    }

    proptest! {
        #[test]
        fn digest_invariant_under_key_order(perm in Just(vec!["model", "messages", "temperature", "max_tokens"]).prop_shuffle()) {
            let value = serde_json::to_value(sample()).unwrap();
            let parts: Vec<String> = perm
                .iter()
                .map(|k| format!("{}:{}", Value::String(k.to_string()), value[*k]))
                .collect();
            let text = format!("{{{}}}", parts.join(","));
            let permuted: Value = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(canonical_digest(&permuted), sample().digest());
        }
    }

    #[test]
    fn transcript_records_exchanges() {
        let client = LlmClient::new(
            ScriptedBackend::new(|req: &ChatRequest| Some(format!("echo: {}", req.prompt()))),
            ModelSettings::default(),
        );
        assert_eq!(client.complete_prompt("hi").unwrap(), "echo: hi");
        let t = client.transcript();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].request_digest, t[0].request.digest());
        assert_eq!(t[0].backend, BackendTag::Scripted);
    }
}
