//! Hardening pipeline for LLM-generated Python code.
//!
//! A coding agent writes a function from its docstring, a static-review agent
//! audits it for CWE weaknesses and sends findings back for repair, and a
//! fuzzing agent drives the result with type-aware mutated inputs inside a
//! subprocess sandbox, feeding crashes back until they are fixed or the round
//! budget runs out. Every LLM exchange goes through a pluggable backend; the
//! replay backend makes whole runs deterministic and offline.

pub mod coding_agent;
pub mod corpus;
pub mod fuzzing_agent;
pub mod llm;
pub mod metrics;
pub mod mutation;
pub mod orchestrator;
pub mod python;
pub mod rng;
pub mod sandbox;
pub mod static_agent;

pub use coding_agent::{CandidateCode, CodingAgent, Provenance};
pub use corpus::{load_corpus, Corpus, CorpusFormat, TaskSpec};
pub use fuzzing_agent::{CrashReport, FuzzConfig, FuzzLoopTrace, FuzzOutcome, FuzzStatus, FuzzingAgent};
pub use llm::{ChatBackend, LlmClient, LlmError};
pub use metrics::{pass_at_k, summarize, SummaryReport};
pub use mutation::{FuzzKind, FuzzValue, InputTuple};
pub use orchestrator::{Pipeline, PipelineConfig, TaskStatus, TaskTrace};
pub use rng::FuzzRng;
pub use sandbox::{Classification, ExecutionResult, ProgramBundle, Sandbox, SandboxConfig};
pub use static_agent::{StaticAgent, StaticLoopTrace, StaticVerdict};
