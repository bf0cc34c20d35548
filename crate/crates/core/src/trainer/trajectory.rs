use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::router::{StepDecision, StepInputs};

/// One executed step as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub role_id: String,
    pub prompt_tokens: usize,
    #[serde(flatten)]
    pub decision: StepDecision,
}

/// Embeddings needed to replay an episode through the router.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub query: Vec<f64>,
    pub roles: Arc<Vec<Vec<f64>>>,
    /// History entry embeddings in step order.
    pub history: Vec<Vec<f64>>,
    pub window_cap: Option<usize>,
}

impl EpisodeTrace {
    /// Router inputs seen before step `step` (1-based).
    pub fn inputs(&self, step: usize) -> StepInputs<'_> {
        StepInputs { query: &self.query, roles: &self.roles, history: &self.history[..step - 1] }
    }
}

/// One sampled or evaluated episode. Serialized as one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub steps: Vec<StepRecord>,
    pub sequence_length: usize,
    pub final_answer: String,
    pub correct: bool,
    pub reward: f64,
    pub advantage: f64,
    pub total_log_prob: f64,
    pub total_prompt_tokens: usize,
    #[serde(skip)]
    pub trace: Option<Arc<EpisodeTrace>>,
}

impl Trajectory {
    /// Context entries selected, summed over steps.
    pub fn selected_context(&self) -> usize {
        self.steps.iter().map(|s| s.decision.mask.iter().filter(|&&m| m).count()).sum()
    }
}
