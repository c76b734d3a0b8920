//! Record/replay of chat-completion exchanges for hermetic runs.
//!
//! A cassette is line-delimited JSON, one exchange per line. Exchanges are
//! keyed by a SHA-256 over style, model id and messages; auth headers and
//! timing never enter the key.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specplan_core::AgentError;
use thiserror::Error;

use crate::config::PromptStyle;
use crate::transport::{ChatMessage, ChatRequest, ChatTransport, Completion};

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cassette {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub style: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub response: Completion,
}

pub fn request_key(style: PromptStyle, model_id: &str, messages: &[ChatMessage]) -> String {
    let material = serde_json::json!({
        "style": style.label(),
        "model_id": model_id,
        "messages": messages,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Record,
    Replay,
}

enum Inner {
    Record {
        upstream: Arc<dyn ChatTransport>,
        file: Mutex<File>,
    },
    Replay {
        entries: HashMap<String, Completion>,
    },
}

/// A transport wrapper: in record mode it forwards to `upstream` and
/// appends each exchange; in replay mode it answers from the file only.
pub struct Cassette {
    path: PathBuf,
    inner: Inner,
}

impl Cassette {
    pub fn record(path: impl AsRef<Path>, upstream: Arc<dyn ChatTransport>) -> Result<Self, CassetteError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| CassetteError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Cassette {
            path,
            inner: Inner::Record {
                upstream,
                file: Mutex::new(file),
            },
        })
    }

    /// Loads an existing cassette. The first entry for a key wins.
    pub fn replay(path: impl AsRef<Path>) -> Result<Self, CassetteError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        for entry in read_entries(&path)? {
            entries.entry(entry.key).or_insert(entry.response);
        }
        Ok(Cassette {
            path,
            inner: Inner::Replay { entries },
        })
    }

    pub fn open(mode: CassetteMode, path: impl AsRef<Path>, upstream: Arc<dyn ChatTransport>) -> Result<Self, CassetteError> {
        match mode {
            CassetteMode::Record => Cassette::record(path, upstream),
            CassetteMode::Replay => Cassette::replay(path),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> CassetteMode {
        match self.inner {
            Inner::Record { .. } => CassetteMode::Record,
            Inner::Replay { .. } => CassetteMode::Replay,
        }
    }
}

pub fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, CassetteError> {
    let text = std::fs::read_to_string(path).map_err(|source| CassetteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CassetteError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[async_trait]
impl ChatTransport for Cassette {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, AgentError> {
        let key = request_key(request.style, &request.endpoint.model_id, &request.messages);
        match &self.inner {
            Inner::Replay { entries } => entries
                .get(&key)
                .cloned()
                .ok_or(AgentError::CassetteMiss { key }),
            Inner::Record { upstream, file } => {
                let response = upstream.complete(request).await?;
                let entry = CassetteEntry {
                    key,
                    style: request.style.label().to_string(),
                    model_id: request.endpoint.model_id.clone(),
                    messages: request.messages.clone(),
                    response: response.clone(),
                };
                let mut line = serde_json::to_string(&entry).expect("cassette entry serializes");
                line.push('\n');
                let mut f = file.lock().expect("cassette lock poisoned");
                f.write_all(line.as_bytes())
                    .and_then(|_| f.flush())
                    .map_err(|e| AgentError::Other(format!("cassette write failed: {e}")))?;
                Ok(response)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_ignores_nothing_but_auth_and_time() {
        let m = vec![ChatMessage::user("plan a trip")];
        let k = request_key(PromptStyle::Direct, "gpt", &m);
        assert_eq!(k.len(), 64);
        assert_eq!(k, request_key(PromptStyle::Direct, "gpt", &m));
        assert_ne!(k, request_key(PromptStyle::ReAct, "gpt", &m));
        assert_ne!(k, request_key(PromptStyle::Direct, "gpt-4", &m));
        assert_ne!(k, request_key(PromptStyle::Direct, "gpt", &[ChatMessage::user("plan a trip!")]));
    }

    #[test]
    fn replay_of_missing_file_fails() {
        assert!(matches!(
            Cassette::replay("/nonexistent/cassette.jsonl"),
            Err(CassetteError::Io { .. })
        ));
    }
}
