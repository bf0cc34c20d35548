//! Agent execution backends.

mod cassette;
mod http;
mod malicious;
mod scripted;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cassette::{request_key, Cassette, CassetteEntry, RecordingBackend, ReplayBackend, CASSETTE_FORMAT};
pub use http::{ChatCompletionsBackend, EndpointConfig, RateLimiter};
pub use malicious::{malicious_respond, MaliciousAgent, POISON_CLUE};
pub use scripted::{
    derive_answer, scripted_respond, Family, Route, ScriptedWorld, SyntheticTask, World, WorldConfig, DECISION_ROLE_ID,
    MALICIOUS_ROLE_ID,
};

use crate::error::TransportError;
use crate::orchestrator::{Query, RoleSpec};

/// Token accounting for one call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

/// One agent invocation. The prompts are what a language model would see;
/// `query` and `role` identify the call for scripted backends.
#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub query: &'a Query,
    pub role: &'a RoleSpec,
    pub system_prompt: &'a str,
    pub user_prompt: &'a str,
    pub context_block: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub text: String,
    pub usage: Usage,
}

pub trait AgentBackend: Send + Sync {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for Arc<B> {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        (**self).respond(request)
    }
}

/// Routes calls to per-role backends, falling back to a default.
#[derive(Clone)]
pub struct RoleDispatch {
    default: Arc<dyn AgentBackend>,
    overrides: HashMap<String, Arc<dyn AgentBackend>>,
}

impl RoleDispatch {
    pub fn new(default: Arc<dyn AgentBackend>) -> Self {
        RoleDispatch { default, overrides: HashMap::new() }
    }

    pub fn with_role(mut self, role_id: impl Into<String>, backend: Arc<dyn AgentBackend>) -> Self {
        self.overrides.insert(role_id.into(), backend);
        self
    }
}

impl AgentBackend for RoleDispatch {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        self.overrides.get(&request.role.id).unwrap_or(&self.default).respond(request)
    }
}
