//! Record/replay of backend traffic.
//!
//! Cassette file format (JSON):
//!
//! ```json
//! {
//!   "format": "seqroute-cassette",
//!   "version": 1,
//!   "interactions": [
//!     {"key": "<sha256 hex>", "role_id": "critic", "system_prompt": "...",
//!      "user_prompt": "...", "context_block": "...",
//!      "reply": {"text": "...", "usage": {"prompt_tokens": 10, "completion_tokens": 5}}}
//!   ]
//! }
//! ```
//!
//! `key` hashes the query id, role id and the three prompt strings. Repeated
//! keys replay their replies in order; the last one repeats once exhausted.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentBackend, AgentReply, AgentRequest};
use crate::error::{Error, Result, TransportError};

pub const CASSETTE_FORMAT: &str = "seqroute-cassette";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub role_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub context_block: String,
    pub reply: AgentReply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub format: String,
    pub version: u32,
    pub interactions: Vec<CassetteEntry>,
}

impl Default for Cassette {
    fn default() -> Self {
        Cassette { format: CASSETTE_FORMAT.into(), version: 1, interactions: Vec::new() }
    }
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Cassette = serde_json::from_str(&text)?;
        if c.format != CASSETTE_FORMAT || c.version != 1 {
            return Err(Error::Input(format!("unsupported cassette {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn request_key(request: &AgentRequest<'_>) -> String {
    let mut h = Sha256::new();
    for part in [
        request.query.id.as_str(),
        request.role.id.as_str(),
        request.system_prompt,
        request.user_prompt,
        request.context_block,
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Forwards to `inner` and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<CassetteEntry>>,
}

impl<B: AgentBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn cassette(&self) -> Cassette {
        Cassette { interactions: self.log.lock().unwrap_or_else(|e| e.into_inner()).clone(), ..Default::default() }
    }
}

impl<B: AgentBackend> AgentBackend for RecordingBackend<B> {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        let reply = self.inner.respond(request)?;
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(CassetteEntry {
            key: request_key(request),
            role_id: request.role.id.clone(),
            system_prompt: request.system_prompt.to_string(),
            user_prompt: request.user_prompt.to_string(),
            context_block: request.context_block.to_string(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

/// Serves replies from a cassette; unknown requests fail.
pub struct ReplayBackend {
    replies: HashMap<String, Vec<AgentReply>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new(cassette: &Cassette) -> Self {
        let mut replies: HashMap<String, Vec<AgentReply>> = HashMap::new();
        for e in &cassette.interactions {
            replies.entry(e.key.clone()).or_default().push(e.reply.clone());
        }
        ReplayBackend { replies, cursor: Mutex::new(HashMap::new()) }
    }
}

impl AgentBackend for ReplayBackend {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        let key = request_key(request);
        let list = self.replies.get(&key).ok_or_else(|| TransportError::CassetteMiss(key.clone()))?;
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let i = cursor.entry(key).or_insert(0);
        let reply = list[(*i).min(list.len() - 1)].clone();
        *i += 1;
        Ok(reply)
    }
}
