//! Episode driver: encode, decide, execute, repeat until a decision agent
//! answers or the step cap is hit.

mod dag;
mod prompt;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dag::{dag_to_sequence, Dag, DagNode, SequencePlan};
pub use prompt::{compose_prompt, count_tokens, role_summary, ComposedPrompt, TASK_INSTRUCTIONS};

use crate::agents::{AgentBackend, AgentRequest};
use crate::encoding::{encode_history_entry, TextEncoder};
use crate::error::{Error, Result, TransportError};
use crate::router::{Mode, Noise, Router, StepDecision, StepInputs};
use crate::trainer::{EpisodeTrace, StepRecord, Trajectory};

/// A candidate agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub id: String,
    pub role_prompt: String,
    /// Carried into the system prompt; never executed.
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub is_decision: bool,
}

impl RoleSpec {
    pub fn new(id: impl Into<String>, role_prompt: impl Into<String>) -> Self {
        RoleSpec { id: id.into(), role_prompt: role_prompt.into(), tools: Vec::new(), is_decision: false }
    }

    pub fn decision(id: impl Into<String>, role_prompt: impl Into<String>) -> Self {
        RoleSpec { is_decision: true, ..RoleSpec::new(id, role_prompt) }
    }
}

/// Validated role list with exactly one decision role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct Catalog {
    roles: Vec<RoleSpec>,
    decision: usize,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    roles: Vec<RoleSpec>,
}

impl TryFrom<CatalogFile> for Catalog {
    type Error = Error;

    fn try_from(f: CatalogFile) -> Result<Self> {
        Catalog::new(f.roles)
    }
}

impl From<Catalog> for CatalogFile {
    fn from(c: Catalog) -> Self {
        CatalogFile { roles: c.roles }
    }
}

impl Catalog {
    pub fn new(roles: Vec<RoleSpec>) -> Result<Self> {
        let decisions: Vec<usize> = roles.iter().enumerate().filter(|(_, r)| r.is_decision).map(|(i, _)| i).collect();
        if decisions.len() != 1 {
            return Err(Error::Config(format!("catalog needs exactly one decision role, found {}", decisions.len())));
        }
        let mut seen = HashSet::new();
        for r in &roles {
            if r.id.trim().is_empty() || r.role_prompt.trim().is_empty() {
                return Err(Error::Config("roles need a non-empty id and prompt".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate role id {}", r.id)));
            }
        }
        Ok(Catalog { roles, decision: decisions[0] })
    }

    pub fn roles(&self) -> &[RoleSpec] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn decision_index(&self) -> usize {
        self.decision
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.id == id)
    }

    pub fn get(&self, index: usize) -> &RoleSpec {
        &self.roles[index]
    }

    /// A copy with `role` inserted just before the decision role.
    pub fn with_extra_role(&self, role: RoleSpec) -> Result<Catalog> {
        let mut roles = self.roles.clone();
        roles.insert(self.decision, role);
        Catalog::new(roles)
    }
}

/// A task posed to the agent team.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Ground truth, when known.
    #[serde(default)]
    pub answer: Option<String>,
}

impl Query {
    pub fn is_correct(&self, answer: &str) -> bool {
        self.answer.as_deref().is_some_and(|a| a.trim().eq_ignore_ascii_case(answer.trim()))
    }
}

/// One executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    /// 1-based.
    pub step: usize,
    pub role_id: String,
    pub role_index: usize,
    pub role_prompt: String,
    pub response_text: String,
    pub role_embedding: Vec<f64>,
    pub response_embedding: Vec<f64>,
    pub prompt_tokens_used: usize,
    /// Which earlier steps this agent saw.
    pub context_mask_applied: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Maximum agents per episode; the last is forced to the decision role.
    pub t_max: usize,
    /// Only the newest `window_cap` responses may be selected as context.
    pub window_cap: Option<usize>,
    /// Give the decision agent every prior response regardless of its mask.
    pub full_visibility_referee: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { t_max: 5, window_cap: None, full_visibility_referee: false }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if self.window_cap == Some(0) {
            return Err(Error::Config("window_cap must be at least 1 when set".into()));
        }
        Ok(())
    }
}

/// Everything a policy may look at when choosing step `step`.
pub struct StepContext<'a> {
    pub query: &'a Query,
    pub catalog: &'a Catalog,
    /// 1-based.
    pub step: usize,
    pub history: &'a [HistoryEntry],
    pub inputs: StepInputs<'a>,
    pub window_cap: Option<usize>,
}

/// Chooses the next role and the context it sees.
pub trait Policy: Sync {
    fn decide(&self, ctx: &StepContext<'_>, mode: Mode, noise: &mut dyn Noise) -> Result<StepDecision>;
}

impl Policy for Router {
    fn decide(&self, ctx: &StepContext<'_>, mode: Mode, noise: &mut dyn Noise) -> Result<StepDecision> {
        Router::decide(self, &ctx.inputs, mode, ctx.window_cap, noise)
    }
}

/// Replays a fixed sequence plan, e.g. one produced by [`dag_to_sequence`].
#[derive(Debug, Clone)]
pub struct ScheduledPolicy {
    roles: Vec<usize>,
    masks: Vec<Vec<bool>>,
}

impl ScheduledPolicy {
    pub fn new(plan: &SequencePlan, catalog: &Catalog) -> Result<Self> {
        let roles = plan
            .roles
            .iter()
            .map(|r| catalog.index_of(r).ok_or_else(|| Error::Input(format!("plan role {r} not in catalog"))))
            .collect::<Result<Vec<_>>>()?;
        let masks = (1..=plan.len()).map(|t| plan.bool_mask(t)).collect();
        Ok(ScheduledPolicy { roles, masks })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

impl Policy for ScheduledPolicy {
    fn decide(&self, ctx: &StepContext<'_>, _mode: Mode, _noise: &mut dyn Noise) -> Result<StepDecision> {
        let i = ctx.step - 1;
        let role_index =
            *self.roles.get(i).ok_or_else(|| Error::Contract(format!("schedule has no step {}", ctx.step)))?;
        let n = ctx.catalog.len();
        let mut scores = vec![0.0; n];
        scores[role_index] = 1.0;
        Ok(StepDecision {
            role_index,
            scores,
            gates: self.masks[i].iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            mask: self.masks[i].clone(),
            nap_logprob: 0.0,
            ncs_logprob: 0.0,
            uniform_choice: false,
            forced: false,
        })
    }
}

/// Shared, read-only pieces of an episode.
#[derive(Clone)]
pub struct Environment {
    pub catalog: Catalog,
    pub encoder: Arc<dyn TextEncoder>,
    pub backend: Arc<dyn AgentBackend>,
    pub config: EpisodeConfig,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub final_answer: String,
    pub sequence_length: usize,
    pub trajectory: Trajectory,
    pub total_prompt_tokens: usize,
    pub history: Vec<HistoryEntry>,
}

impl Environment {
    pub fn role_embeddings(&self) -> Result<Vec<Vec<f64>>> {
        self.catalog.roles().iter().map(|r| self.encoder.embed(&r.role_prompt)).collect()
    }
}

/// Runs one query to completion.
pub fn run_episode(
    query: &Query,
    env: &Environment,
    policy: &dyn Policy,
    mode: Mode,
    noise: &mut dyn Noise,
) -> Result<EpisodeResult> {
    env.config.validate()?;
    let catalog = &env.catalog;
    // Role embeddings are constant over an episode.
    let roles = Arc::new(env.role_embeddings()?);
    let query_embedding = env.encoder.embed(&query.text)?;
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut history_embeddings: Vec<Vec<f64>> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut final_answer = None;

    for t in 1..=env.config.t_max {
        let ctx = StepContext {
            query,
            catalog,
            step: t,
            history: &history,
            inputs: StepInputs { query: &query_embedding, roles: &roles, history: &history_embeddings },
            window_cap: env.config.window_cap,
        };
        let mut decision = policy.decide(&ctx, mode, noise)?;
        if decision.role_index >= catalog.len() {
            return Err(Error::Contract(format!("policy chose role {} of {}", decision.role_index, catalog.len())));
        }
        if decision.mask.len() != history.len() {
            return Err(Error::Contract("context mask length differs from history length".into()));
        }
        if t == env.config.t_max && !catalog.get(decision.role_index).is_decision {
            decision.role_index = catalog.decision_index();
            decision.forced = true;
            decision.nap_logprob = 0.0;
        }
        let role = catalog.get(decision.role_index);
        let applied = if role.is_decision && env.config.full_visibility_referee {
            vec![true; history.len()]
        } else {
            decision.mask.clone()
        };
        let prompt = compose_prompt(role, query, &history, &applied);
        let request = AgentRequest {
            query,
            role,
            system_prompt: &prompt.system,
            user_prompt: &prompt.user,
            context_block: &prompt.context,
        };
        let reply = match env.backend.respond(&request).and_then(|r| {
            if r.text.trim().is_empty() {
                Err(TransportError::Malformed(format!("empty response from role {}", role.id)))
            } else {
                Ok(r)
            }
        }) {
            Ok(r) => r,
            Err(source) => {
                let partial = assemble(query, steps, history.len(), String::new(), false, None);
                return Err(Error::EpisodeAborted { step: t, source, partial: Box::new(partial) });
            }
        };
        let prompt_tokens =
            if reply.usage.prompt_tokens > 0 { reply.usage.prompt_tokens } else { prompt.token_count() };
        let entry = HistoryEntry {
            step: t,
            role_id: role.id.clone(),
            role_index: decision.role_index,
            role_prompt: role.role_prompt.clone(),
            response_text: reply.text.clone(),
            role_embedding: roles[decision.role_index].clone(),
            response_embedding: env.encoder.embed(&reply.text)?,
            prompt_tokens_used: prompt_tokens,
            context_mask_applied: applied,
        };
        history_embeddings.push(encode_history_entry(&entry)?);
        history.push(entry);
        steps.push(StepRecord { step: t, role_id: role.id.clone(), prompt_tokens, decision });
        if role.is_decision {
            final_answer = Some(reply.text);
            break;
        }
    }

    let final_answer = final_answer.ok_or_else(|| Error::Contract("episode ended without a decision".into()))?;
    let correct = query.is_correct(&final_answer);
    let trace =
        EpisodeTrace { query: query_embedding, roles, history: history_embeddings, window_cap: env.config.window_cap };
    let sequence_length = steps.len();
    let trajectory = assemble(query, steps, sequence_length, final_answer.clone(), correct, Some(trace));
    let total_prompt_tokens = trajectory.total_prompt_tokens;
    Ok(EpisodeResult { final_answer, sequence_length, trajectory, total_prompt_tokens, history })
}

fn assemble(
    query: &Query,
    steps: Vec<StepRecord>,
    sequence_length: usize,
    final_answer: String,
    correct: bool,
    trace: Option<EpisodeTrace>,
) -> Trajectory {
    let total_log_prob = steps.iter().map(|s| s.decision.nap_logprob + s.decision.ncs_logprob).sum();
    let total_prompt_tokens = steps.iter().map(|s| s.prompt_tokens).sum();
    Trajectory {
        question_id: query.id.clone(),
        steps,
        sequence_length,
        final_answer,
        correct,
        reward: 0.0,
        advantage: 0.0,
        total_log_prob,
        total_prompt_tokens,
        trace: trace.map(Arc::new),
    }
}
