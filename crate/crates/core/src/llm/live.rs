use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendTag, ChatBackend, ChatRequest, LlmError};

pub const API_KEY_ENV: &str = "AUTOSAFE_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended.
    pub api_base: String,
    pub api_key: String,
    pub request_timeout: Duration,
    /// Retries after the first attempt, for retryable failures only.
    pub max_retries: u32,
    /// Delay before the first retry; doubles for each one after.
    pub backoff: Duration,
}

impl LiveConfig {
    pub fn new(api_base: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: api_key.into(),
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads the key from `AUTOSAFE_API_KEY`.
    pub fn from_env(api_base: impl Into<String>) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(api_base, key))
    }
}

/// Chat-completions over HTTP with bearer auth.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'))
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut resp = self
            .agent
            .post(self.endpoint())
            .header("Authorization", format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| LlmError::Transport {
                message: e.to_string(),
                retryable: true,
            })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| LlmError::Transport {
            message: format!("reading response body: {e}"),
            retryable: true,
        })?;
        match status {
            200..=299 => parse_completion(&text),
            401 | 403 => Err(LlmError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 | 409 | 429 | 500..=599 => Err(LlmError::Transport {
                message: format!("HTTP {status}: {}", snippet(&text)),
                retryable: true,
            }),
            _ => Err(LlmError::Transport {
                message: format!("HTTP {status}: {}", snippet(&text)),
                retryable: false,
            }),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

fn parse_completion(text: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for LiveBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Live
    }

    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<String, LlmError> {
        let mut delay = self.config.backoff;
        let mut retries = 0;
        loop {
            match self.attempt(request) {
                Err(LlmError::Transport { retryable: true, message }) if retries < self.config.max_retries => {
                    log::warn!("chat request failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    retries += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, LlmClient, ModelSettings};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned HTTP responses in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; content_length];
                reader.read_exact(&mut buf).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    fn client(base: String) -> LlmClient {
        let mut config = LiveConfig::new(base, "test-key");
        config.backoff = Duration::from_millis(1);
        config.request_timeout = Duration::from_secs(5);
        LlmClient::new(LiveBackend::new(config), ModelSettings::default())
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    #[test]
    fn success_returns_message_text() {
        let (base, _) = serve(vec![(200, ok_body("hello"))]);
        let c = client(base);
        assert_eq!(c.complete(&c.request(vec![ChatMessage::user("hi")])).unwrap(), "hello");
        assert_eq!(c.transcript()[0].backend, BackendTag::Live);
    }

    #[test]
    fn unauthorized_maps_to_auth_error() {
        let (base, hits) = serve(vec![(401, r#"{"error": "bad key"}"#.into())]);
        let err = client(base).complete_prompt("hi").unwrap_err();
        assert!(matches!(err, LlmError::Auth(_)), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (base, hits) = serve(vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, ok_body("third time")),
        ]);
        assert_eq!(client(base).complete_prompt("hi").unwrap(), "third time");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let (base, hits) = serve(vec![(500, "{}".into()); 5]);
        let err = client(base).complete_prompt("hi").unwrap_err();
        assert!(matches!(err, LlmError::Transport { retryable: true, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, hits) = serve(vec![(400, "{}".into()), (200, ok_body("never"))]);
        let err = client(base).complete_prompt("hi").unwrap_err();
        assert!(matches!(err, LlmError::Transport { retryable: false, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn malformed_success_body() {
        let (base, _) = serve(vec![(200, "{\"choices\": []}".into())]);
        assert!(matches!(client(base).complete_prompt("hi"), Err(LlmError::BadResponse(_))));
    }
}
