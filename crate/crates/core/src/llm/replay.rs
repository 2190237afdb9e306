use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendTag, ChatBackend, ChatExchange, ChatRequest, LlmError};

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_digest: String,
    pub response: String,
}

pub fn read_replay_file(path: &Path) -> Result<Vec<ReplayEntry>, LlmError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LlmError::ReplayFile(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| LlmError::ReplayFile(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Writes exchanges as replay JSONL, one entry per distinct digest, sorted by
/// digest so concurrent sessions export identical files.
pub fn write_replay_file(path: &Path, exchanges: &[ChatExchange]) -> io::Result<()> {
    let mut unique: BTreeMap<&str, &str> = BTreeMap::new();
    for ex in exchanges {
        unique.entry(&ex.request_digest).or_insert(&ex.response);
    }
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for (digest, response) in unique {
        let entry = ReplayEntry {
            request_digest: digest.to_string(),
            response: response.to_string(),
        };
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Answers from a recorded transcript by exact request digest.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut responses = HashMap::new();
        for e in entries {
            responses.entry(e.request_digest).or_insert(e.response);
        }
        Self { responses }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::from_entries(read_replay_file(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Replay
    }

    fn complete(&self, _request: &ChatRequest, digest: &str) -> Result<String, LlmError> {
        self.responses
            .get(digest)
            .cloned()
            .ok_or_else(|| LlmError::ReplayMiss(digest.to_string()))
    }
}

type Responder = dyn Fn(&ChatRequest) -> Option<String> + Send + Sync;

/// Answers by running a function over the request; `None` is reported as a
/// replay miss. Useful for scripted agents in tests and for producing replay
/// fixtures.
pub struct ScriptedBackend {
    respond: Box<Responder>,
}

impl ScriptedBackend {
    pub fn new(respond: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            respond: Box::new(respond),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Scripted
    }

    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, LlmError> {
        (self.respond)(request).ok_or_else(|| LlmError::ReplayMiss(digest.to_string()))
    }
}
