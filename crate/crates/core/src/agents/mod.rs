//! LLM agents: document schemas, prompt rendering, transports, the
//! deterministic mock transports and the orchestration loop.

pub mod mock;
pub mod orchestrator;
pub mod prompt;
pub mod schema;
pub mod transport;
