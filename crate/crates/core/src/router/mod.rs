//! The learnable routing policy.
//!
//! At each step the router encodes `[query, roles, history, nap, ncs]` with a
//! small transformer, scores every role against the contextualized NAP row
//! (inner product, then rescaled to mean 0 / std `alpha`), and gates every
//! history entry by `sigmoid(beta * cos(ncs, hist_j))`.

mod selection;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use selection::{
    context_log_prob, gates_from_cosines, normalize_scores, select_agent_inference, select_agent_training,
    select_context_inference, select_context_training, select_uniform, sigmoid, window_start, Noise, RngNoise,
    ZeroNoise,
};
pub use transformer::{EncoderLayer, LayerNormParams, TransformerStack};

use crate::encoding::{build_input_sequence, InputSequence, ProjectionSet, SlotTag};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Graph, ParamStore, Tensor, Var};

/// How slots map to rows of the positional table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionMode {
    /// One position per slot index.
    #[default]
    PerSlot,
    /// All role slots share one position; history slots are positioned by step.
    RoleRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub embed_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Target standard deviation of NAP scores.
    pub alpha: f64,
    /// Cosine scale inside the NCS sigmoid.
    pub beta: f64,
    /// Inference threshold on NCS gates.
    pub eta: f64,
    /// Gumbel-softmax temperature during training.
    pub temperature: f64,
    pub position_mode: PositionMode,
    /// Largest role catalog the positional table supports.
    pub max_roles: usize,
    /// Largest history the positional table supports.
    pub max_history: usize,
    pub init_seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            embed_dim: crate::encoding::DEFAULT_EMBED_DIM,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 256,
            alpha: 1.5,
            beta: 3.0,
            eta: 0.5,
            temperature: 1.0,
            position_mode: PositionMode::PerSlot,
            max_roles: 16,
            max_history: 8,
            init_seed: 0,
        }
    }
}

impl RouterConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed_dim == 0 || self.d_model < 2 || self.d_ff == 0 || self.max_roles == 0 {
            return bad("router widths must be positive (d_model >= 2)");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad("alpha and beta must be positive");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }

    fn position_table_size(&self) -> usize {
        match self.position_mode {
            PositionMode::PerSlot => 1 + self.max_roles + self.max_history + 2,
            PositionMode::RoleRegion => 2 + self.max_history + 2,
        }
    }
}

/// Whether the router samples (training) or acts greedily (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Embeddings the router sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub query: &'a [f64],
    pub roles: &'a [Vec<f64>],
    /// Concatenated role+response embeddings of prior steps.
    pub history: &'a [Vec<f64>],
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct StepForward {
    pub sequence: InputSequence,
    pub encoded: Var,
    pub raw_scores: Var,
    pub scores: Var,
    pub uniform_choice: bool,
    pub cosines: Option<Var>,
    pub gates: Option<Var>,
}

/// One routing decision. `role_index` and mask positions are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    pub role_index: usize,
    pub scores: Vec<f64>,
    pub gates: Vec<f64>,
    pub mask: Vec<bool>,
    pub nap_logprob: f64,
    pub ncs_logprob: f64,
    /// Scores were degenerate and the role was chosen uniformly.
    #[serde(default)]
    pub uniform_choice: bool,
    /// The step cap overrode the choice with the decision role.
    #[serde(default)]
    pub forced: bool,
}

/// Differentiable pieces of one replayed step.
#[derive(Debug, Clone, Copy)]
pub struct StepTerms {
    /// NAP + NCS log-probability, if the step contributed any.
    pub log_prob: Option<Var>,
    /// Sum of in-window gate values.
    pub gate_sum: Option<Var>,
}

/// Router parameters and architecture.
#[derive(Debug, Clone)]
pub struct Router {
    config: RouterConfig,
    params: ParamStore,
    projections: ProjectionSet,
    stack: TransformerStack,
}

impl Router {
    pub fn new(config: RouterConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let projections = ProjectionSet::register(&mut params, config.embed_dim, config.d_model, &mut rng)?;
        let stack = TransformerStack::register(
            &mut params,
            config.layers,
            config.heads,
            config.d_model,
            config.d_ff,
            config.position_table_size(),
            &mut rng,
        )?;
        Ok(Router { config, params, projections, stack })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn stack(&self) -> &TransformerStack {
        &self.stack
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.params)
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.apply_to(&mut self.params)
    }

    /// Positional-table rows for a tagged sequence.
    pub fn positions(&self, tags: &[SlotTag]) -> Result<Vec<usize>> {
        let c = &self.config;
        let roles = tags.iter().filter(|t| matches!(t, SlotTag::Role(_))).count();
        let hist = tags.iter().filter(|t| matches!(t, SlotTag::Hist(_))).count();
        if roles > c.max_roles || hist > c.max_history {
            return Err(Error::Config(format!(
                "router supports {} roles and {} history entries, got {roles} and {hist}",
                c.max_roles, c.max_history
            )));
        }
        Ok(match c.position_mode {
            PositionMode::PerSlot => (0..tags.len()).collect(),
            PositionMode::RoleRegion => tags
                .iter()
                .map(|t| match t {
                    SlotTag::Query => 0,
                    SlotTag::Role(_) => 1,
                    SlotTag::Hist(j) => 1 + j,
                    SlotTag::Nap => 2 + c.max_history,
                    SlotTag::Ncs => 3 + c.max_history,
                })
                .collect(),
        })
    }

    /// Contextual encoding: same number of rows out as in.
    pub fn contextual_encode(&self, g: &mut Graph<'_>, seq: &InputSequence) -> Result<Var> {
        let positions = self.positions(&seq.tags)?;
        self.stack.encode(g, seq.rows, &positions)
    }

    /// Full forward pass for one step.
    pub fn forward(&self, g: &mut Graph<'_>, inputs: &StepInputs<'_>) -> Result<StepForward> {
        let sequence = build_input_sequence(g, inputs.query, inputs.roles, inputs.history, &self.projections)?;
        let encoded = self.contextual_encode(g, &sequence)?;
        let n = inputs.roles.len();
        let t_hist = inputs.history.len();
        let len = sequence.len();

        let role_rows: Vec<usize> = (1..=n).collect();
        let roles = g.gather_rows(encoded, &role_rows)?;
        let nap = g.gather_rows(encoded, &[len - 2])?;
        let nap_t = g.transpose(nap)?;
        let raw = g.matmul(roles, nap_t)?;
        let raw_scores = g.reshape(raw, &[n])?;
        let (scores, uniform_choice) =
            if n == 1 { (g.scale(raw_scores, 0.0)?, false) } else { g.standardize(raw_scores, self.config.alpha)? };

        let (cosines, gates) = if t_hist == 0 {
            (None, None)
        } else {
            let hist_rows: Vec<usize> = (1 + n..1 + n + t_hist).collect();
            let hist = g.gather_rows(encoded, &hist_rows)?;
            let ncs = g.gather_rows(encoded, &[len - 1])?;
            let ncs = g.reshape(ncs, &[self.config.d_model])?;
            let cos = g.cosine(ncs, hist)?;
            let scaled = g.scale(cos, self.config.beta)?;
            (Some(cos), Some(g.sigmoid(scaled)?))
        };
        Ok(StepForward { sequence, encoded, raw_scores, scores, uniform_choice, cosines, gates })
    }

    /// Chooses the next role and context mask.
    pub fn decide(
        &self,
        inputs: &StepInputs<'_>,
        mode: Mode,
        window_cap: Option<usize>,
        noise: &mut dyn Noise,
    ) -> Result<StepDecision> {
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, inputs)?;
        let scores = g.value(fwd.scores).values().to_vec();
        let gates = fwd.gates.map(|v| g.value(v).values().to_vec()).unwrap_or_default();
        let n = scores.len();
        let (role_index, nap_logprob, mask, ncs_logprob) = match mode {
            Mode::Infer => {
                // Degenerate scores are all zero, so argmax already yields index 0.
                let k = select_agent_inference(&scores);
                let mask = select_context_inference(&gates, self.config.eta, window_cap);
                let lp = context_log_prob(&gates, &mask, window_cap);
                let nap_lp = log_softmax(&scores, self.config.temperature, k);
                (k, nap_lp, mask, lp)
            }
            Mode::Train => {
                let (k, nap_lp) = if fwd.uniform_choice {
                    select_uniform(n, noise)
                } else {
                    select_agent_training(&scores, self.config.temperature, noise)
                };
                let (mask, lp) = select_context_training(&gates, window_cap, noise);
                (k, nap_lp, mask, lp)
            }
        };
        Ok(StepDecision {
            role_index,
            scores,
            gates,
            mask,
            nap_logprob,
            ncs_logprob,
            uniform_choice: fwd.uniform_choice,
            forced: false,
        })
    }

    /// Rebuilds a recorded step on `g` and returns differentiable
    /// log-probability and gate-sum terms for it.
    pub fn step_terms(
        &self,
        g: &mut Graph<'_>,
        inputs: &StepInputs<'_>,
        decision: &StepDecision,
        window_cap: Option<usize>,
    ) -> Result<StepTerms> {
        let fwd = self.forward(g, inputs)?;
        let mut parts = Vec::with_capacity(2);
        if !decision.forced {
            let logits = g.scale(fwd.scores, 1.0 / self.config.temperature)?;
            let lsm = g.log_softmax(logits)?;
            parts.push(g.pick(lsm, decision.role_index)?);
        }
        let mut gate_sum = None;
        if let (Some(cos), Some(gates)) = (fwd.cosines, fwd.gates) {
            let len = decision.mask.len();
            let start = window_start(len, window_cap);
            if start < len {
                let z = g.scale(cos, self.config.beta)?;
                let log_keep = g.log_sigmoid(z)?;
                let neg = g.scale(z, -1.0)?;
                let log_drop = g.log_sigmoid(neg)?;
                let keep: Vec<f64> = (0..len).map(|j| if j >= start && decision.mask[j] { 1.0 } else { 0.0 }).collect();
                let drop: Vec<f64> =
                    (0..len).map(|j| if j >= start && !decision.mask[j] { 1.0 } else { 0.0 }).collect();
                let in_window: Vec<f64> = (0..len).map(|j| if j >= start { 1.0 } else { 0.0 }).collect();
                let keep = g.constant(Tensor::vector(keep)?)?;
                let drop = g.constant(Tensor::vector(drop)?)?;
                let window = g.constant(Tensor::vector(in_window)?)?;
                let a = g.dot(log_keep, keep)?;
                let b = g.dot(log_drop, drop)?;
                parts.push(g.add(a, b)?);
                // Gates are positive, so |g_j| = g_j.
                gate_sum = Some(g.dot(gates, window)?);
            }
        }
        Ok(StepTerms { log_prob: g.add_all(&parts)?, gate_sum })
    }
}

fn log_softmax(scores: &[f64], temperature: f64, k: usize) -> f64 {
    let logits: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}
