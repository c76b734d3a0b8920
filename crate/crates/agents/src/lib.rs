//! Remote step generators for specplan.
//!
//! [`RemoteAgent`] talks to an OpenAI-style chat-completions endpoint using
//! one of four prompting styles, and [`Cassette`] records or replays those
//! exchanges so runs can be repeated offline and deterministically.

pub mod cassette;
pub mod config;
pub mod parse;
pub mod remote;
pub mod transport;

pub use cassette::{request_key, Cassette, CassetteEntry, CassetteError, CassetteMode};
pub use config::{AgentEndpointConfig, ConfigError, Endpoint, PromptStyle};
pub use parse::{parse_action, ParseError};
pub use remote::{majority, RemoteAgent};
pub use transport::{ChatMessage, ChatRequest, ChatTransport, Completion, HttpTransport};
