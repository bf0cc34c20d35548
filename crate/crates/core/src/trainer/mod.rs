//! Policy-gradient training of the router.
//!
//! Questions are visited in order. Each question is rolled out until it has
//! `threshold` correct answers or hits the per-question cap; its trajectories
//! then form one group, are scored with per-question normalized advantages,
//! and produce one optimizer step. Epochs repeat until the trajectory budget
//! is spent.

mod optim;
mod trajectory;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use trajectory::{EpisodeTrace, StepRecord, Trajectory};

use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Gradients, Graph, Var};
use crate::orchestrator::{run_episode, Environment, Query};
use crate::router::{Mode, RngNoise, Router};

/// `gamma^l` for a correct answer, else 0.
pub fn compute_reward(correct: bool, length: usize, gamma: f64) -> f64 {
    if correct {
        gamma.powi(length as i32)
    } else {
        0.0
    }
}

/// Standardizes one question's rewards; all zeros when they are constant.
pub fn normalize_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std <= 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// `-sum_k A_k log P(tau_k)`.
pub fn pg_loss(g: &mut Graph<'_>, terms: &[(f64, Var)]) -> Result<Var> {
    let mut parts = Vec::with_capacity(terms.len());
    for &(adv, lp) in terms {
        parts.push(g.scale(lp, -adv)?);
    }
    match g.add_all(&parts)? {
        Some(v) => Ok(v),
        None => g.constant(crate::numerics::Tensor::scalar(0.0)),
    }
}

/// `lambda * sum |g|` over the given per-step gate sums.
pub fn sparsity_loss(g: &mut Graph<'_>, gate_sums: &[Var], lambda: f64) -> Result<Var> {
    match g.add_all(gate_sums)? {
        Some(total) => g.scale(total, lambda),
        None => g.constant(crate::numerics::Tensor::scalar(0.0)),
    }
}

/// `L_PG + L_sparse`; the sparsity weight is already inside `sparse`.
pub fn total_loss(g: &mut Graph<'_>, pg: Var, sparse: Var) -> Result<Var> {
    g.add(pg, sparse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Standard,
    Efficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub budget: usize,
    pub questions: usize,
    pub threshold: usize,
    pub per_question_cap: usize,
    pub seed: u64,
    pub variant: Variant,
    pub optimizer: OptimizerConfig,
    /// Write a checkpoint every this many optimizer steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1.0,
            lambda: 0.0,
            budget: 1000,
            questions: 80,
            threshold: 1,
            per_question_cap: 25,
            seed: 0,
            variant: Variant::Standard,
            optimizer: OptimizerConfig::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// `gamma = 0.9`, `lambda = 1e-3`.
    pub fn efficiency() -> Self {
        TrainConfig { gamma: 0.9, lambda: 1e-3, variant: Variant::Efficiency, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.budget == 0 || self.questions == 0 || self.budget < self.questions {
            return Err(Error::Config("need budget >= questions >= 1".into()));
        }
        if self.threshold == 0 || self.per_question_cap == 0 {
            return Err(Error::Config("threshold and per_question_cap must be >= 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Decides which question to roll out next and when to move on.
#[derive(Debug, Clone)]
pub struct AdaptiveScheduler {
    questions: usize,
    budget: usize,
    threshold: usize,
    cap: usize,
    used: usize,
    next_question: usize,
    epoch: usize,
    group_len: usize,
    group_correct: usize,
}

impl AdaptiveScheduler {
    pub fn new(questions: usize, budget: usize, threshold: usize, cap: usize) -> Self {
        AdaptiveScheduler {
            questions,
            budget,
            threshold,
            cap,
            used: 0,
            next_question: 0,
            epoch: 0,
            group_len: 0,
            group_correct: 0,
        }
    }

    /// Opens the next question group as `(question, epoch)`, or `None` once
    /// the budget is spent.
    pub fn start_group(&mut self) -> Option<(usize, usize)> {
        if self.used >= self.budget || self.questions == 0 {
            return None;
        }
        if self.next_question == self.questions {
            self.next_question = 0;
            self.epoch += 1;
        }
        let q = self.next_question;
        self.next_question += 1;
        self.group_len = 0;
        self.group_correct = 0;
        Some((q, self.epoch))
    }

    pub fn wants_more(&self) -> bool {
        self.group_correct < self.threshold && self.group_len < self.cap && self.used < self.budget
    }

    pub fn record(&mut self, correct: bool) {
        self.used += 1;
        self.group_len += 1;
        self.group_correct += usize::from(correct);
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Collects trajectory groups under a fixed policy; `rollout(q)` samples one
/// trajectory for question `q`.
pub fn adaptive_sample(
    questions: usize,
    config: &TrainConfig,
    mut rollout: impl FnMut(usize) -> Result<Trajectory>,
) -> Result<Vec<(usize, Vec<Trajectory>)>> {
    let mut sched = AdaptiveScheduler::new(questions, config.budget, config.threshold, config.per_question_cap);
    let mut groups = Vec::new();
    while let Some((q, _)) = sched.start_group() {
        let mut group = Vec::new();
        while sched.wants_more() {
            let t = rollout(q)?;
            sched.record(t.correct);
            group.push(t);
        }
        groups.push((q, group));
    }
    Ok(groups)
}

/// Fills in rewards and advantages for one question group.
pub fn score_group(group: &mut [Trajectory], gamma: f64) {
    for t in group.iter_mut() {
        t.reward = compute_reward(t.correct, t.sequence_length, gamma);
    }
    let rewards: Vec<f64> = group.iter().map(|t| t.reward).collect();
    for (t, a) in group.iter_mut().zip(normalize_advantages(&rewards)) {
        t.advantage = a;
    }
}

/// Loss value and gradients of one trajectory's share of the objective.
pub fn trajectory_gradient(router: &Router, t: &Trajectory, lambda: f64) -> Result<(f64, Gradients)> {
    let trace =
        t.trace.as_ref().ok_or_else(|| Error::Contract(format!("trajectory {} has no replay trace", t.question_id)))?;
    let mut g = Graph::new(router.params());
    let mut log_probs = Vec::new();
    let mut gate_sums = Vec::new();
    for s in &t.steps {
        let terms = router.step_terms(&mut g, &trace.inputs(s.step), &s.decision, trace.window_cap)?;
        log_probs.extend(terms.log_prob);
        gate_sums.extend(terms.gate_sum);
    }
    let pg = match g.add_all(&log_probs)? {
        Some(lp) => pg_loss(&mut g, &[(t.advantage, lp)])?,
        None => g.constant(crate::numerics::Tensor::scalar(0.0))?,
    };
    let sparse = sparsity_loss(&mut g, &gate_sums, lambda)?;
    let loss = total_loss(&mut g, pg, sparse)?;
    let mut grads = Gradients::zeros_like(router.params());
    g.backward(loss, &mut grads)?;
    Ok((g.scalar(loss), grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch: usize,
    pub epoch: usize,
    pub question_id: String,
    pub trajectories: usize,
    pub correct: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub mean_selected_context: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub questions: usize,
    pub trajectories_used: usize,
    pub optimizer_steps: usize,
    pub epochs: usize,
    pub batches: Vec<BatchMetrics>,
}

/// Where training writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub const REPORT: &'static str = "train_report.json";
    pub const TRAJECTORIES: &'static str = "train_trajectories.jsonl";
    pub const CHECKPOINT: &'static str = "checkpoint.json";

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(Self::CHECKPOINT)
    }

    pub fn batch_checkpoint_path(&self, batch: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("batch-{batch:05}.json"))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn diagnostic(group: &[Trajectory]) -> String {
    let rows: Vec<String> = group
        .iter()
        .map(|t| {
            format!(
                "{{question: {}, length: {}, reward: {}, advantage: {}, log_prob: {}}}",
                t.question_id, t.sequence_length, t.reward, t.advantage, t.total_log_prob
            )
        })
        .collect();
    rows.join(", ")
}

/// Trains `router` in place on the first `config.questions` queries.
pub fn train(
    router: &mut Router,
    env: &Environment,
    queries: &[Query],
    config: &TrainConfig,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainReport> {
    config.validate()?;
    let questions = &queries[..config.questions.min(queries.len())];
    if questions.is_empty() {
        return Err(Error::Input("training needs at least one question".into()));
    }
    let mut optimizer = Optimizer::new(config.optimizer.clone(), router.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sched = AdaptiveScheduler::new(questions.len(), config.budget, config.threshold, config.per_question_cap);
    let mut log = match outputs {
        Some(o) => Some(create(&o.dir.join(TrainOutputs::TRAJECTORIES))?),
        None => None,
    };
    let mut batches = Vec::new();
    let mut steps = 0;

    while let Some((q, epoch)) = sched.start_group() {
        let query = &questions[q];
        let mut group = Vec::new();
        while sched.wants_more() {
            let mut noise = RngNoise(&mut rng);
            let result = run_episode(query, env, &*router, Mode::Train, &mut noise)?;
            sched.record(result.trajectory.correct);
            group.push(result.trajectory);
        }
        score_group(&mut group, config.gamma);
        let active = group.iter().any(|t| t.advantage != 0.0);
        let (loss, grad_norm) = if active {
            let lambda = config.lambda;
            let frozen = &*router;
            let parts: Vec<(f64, Gradients)> =
                group.par_iter().map(|t| trajectory_gradient(frozen, t, lambda)).collect::<Result<_>>()?;
            let loss: f64 = parts.iter().map(|(l, _)| l).sum();
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at batch {}: [{}]",
                    batches.len(),
                    diagnostic(&group)
                )));
            }
            let mut grads = Gradients::zeros_like(router.params());
            for (_, p) in &parts {
                grads.add_assign(p);
            }
            let norm = optimizer
                .step(router.params_mut(), &mut grads)
                .map_err(|e| Error::Training(format!("{e} at batch {}: [{}]", batches.len(), diagnostic(&group))))?;
            steps += 1;
            if let (Some(o), Some(every)) = (outputs, config.checkpoint_every) {
                if steps % every == 0 {
                    let path = o.batch_checkpoint_path(batches.len());
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    router.checkpoint().save(&path)?;
                }
            }
            (loss, norm)
        } else {
            (0.0, 0.0)
        };
        if let Some(w) = log.as_mut() {
            for t in &group {
                let line = serde_json::to_string(t)?;
                writeln!(w, "{line}").map_err(|e| Error::io(TrainOutputs::TRAJECTORIES, e))?;
            }
        }
        let n = group.len() as f64;
        batches.push(BatchMetrics {
            batch: batches.len(),
            epoch,
            question_id: query.id.clone(),
            trajectories: group.len(),
            correct: group.iter().filter(|t| t.correct).count(),
            mean_reward: group.iter().map(|t| t.reward).sum::<f64>() / n,
            mean_length: group.iter().map(|t| t.sequence_length as f64).sum::<f64>() / n,
            mean_selected_context: group.iter().map(|t| t.selected_context() as f64).sum::<f64>() / n,
            loss,
            grad_norm,
            updated: active,
        });
    }

    let report = TrainReport {
        seed: config.seed,
        config: config.clone(),
        questions: questions.len(),
        trajectories_used: sched.used(),
        optimizer_steps: steps,
        epochs: sched.epoch() + 1,
        batches,
    };
    if let Some(o) = outputs {
        if let Some(mut w) = log {
            w.flush().map_err(|e| Error::io(&o.dir, e))?;
        }
        Checkpoint::from_store(router.params()).save(&o.checkpoint_path())?;
        let path = o.dir.join(TrainOutputs::REPORT);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tensor};

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(true, 3, 0.9), 0.9f64 * 0.9 * 0.9);
        assert!((compute_reward(true, 3, 0.9) - 0.729).abs() < 1e-15);
        assert_eq!(compute_reward(false, 2, 0.9), 0.0);
        assert_eq!(compute_reward(true, 7, 1.0), 1.0);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(normalize_advantages(&[1.0, 0.0, 1.0, 0.0]), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(normalize_advantages(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
        let a = normalize_advantages(&[0.729, 0.0]);
        assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_composition() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.5)).unwrap();
        let mut g = Graph::new(&store);
        let lp1 = g.param(w);
        let lp2 = g.constant(Tensor::scalar(-2.0)).unwrap();
        let pg = pg_loss(&mut g, &[(1.0, lp1), (-1.0, lp2)]).unwrap();
        assert!((g.scalar(pg) - -(0.5 - -2.0)).abs() < 1e-15);
        let gates = g.constant(Tensor::vector(vec![0.5, 0.5]).unwrap()).unwrap();
        let gs = g.sum(gates).unwrap();
        let sp = sparsity_loss(&mut g, &[gs], 1e-3).unwrap();
        assert!((g.scalar(sp) - 0.001).abs() < 1e-15);
        let zero = sparsity_loss(&mut g, &[gs], 0.0).unwrap();
        let total = total_loss(&mut g, pg, zero).unwrap();
        assert_eq!(g.scalar(total), g.scalar(pg));
    }

    #[test]
    fn replayed_loss_matches_sampled_log_prob() {
        use crate::agents::{World, WorldConfig};
        use crate::encoding::HashTrigramEncoder;
        use crate::orchestrator::EpisodeConfig;
        use crate::router::RouterConfig;
        use std::sync::Arc;

        let world = World::new(WorldConfig::default()).unwrap();
        let tasks = world.sample_tasks(4, 1, "r");
        let env = Environment {
            catalog: world.catalog().clone(),
            encoder: Arc::new(HashTrigramEncoder::new(64).unwrap()),
            backend: world.backend(&tasks),
            config: EpisodeConfig { window_cap: Some(2), ..Default::default() },
        };
        let router = Router::new(RouterConfig { embed_dim: 64, d_model: 16, d_ff: 32, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for task in &tasks {
            let mut t =
                run_episode(&task.to_query(), &env, &router, Mode::Train, &mut RngNoise(&mut rng)).unwrap().trajectory;
            t.advantage = 1.0;
            let (loss, _) = trajectory_gradient(&router, &t, 0.0).unwrap();
            assert!((loss + t.total_log_prob).abs() < 1e-9, "{loss} vs {}", t.total_log_prob);
            assert!(t.total_log_prob <= 0.0);
        }
    }

    #[test]
    fn scheduler_all_easy_uses_one_per_question() {
        let mut s = AdaptiveScheduler::new(5, 100, 1, 25);
        let mut used = 0;
        for _ in 0..5 {
            s.start_group().unwrap();
            while s.wants_more() {
                s.record(true);
                used += 1;
            }
        }
        assert_eq!(used, 5);
        assert_eq!(s.start_group(), Some((0, 1)));
    }

    #[test]
    fn scheduler_caps_impossible_question() {
        let mut s = AdaptiveScheduler::new(2, 1000, 1, 25);
        s.start_group().unwrap();
        let mut n = 0;
        while s.wants_more() {
            s.record(false);
            n += 1;
        }
        assert_eq!(n, 25);
    }

    #[test]
    fn scheduler_stops_at_budget() {
        let mut s = AdaptiveScheduler::new(3, 7, 4, 25);
        let mut total = 0;
        while s.start_group().is_some() {
            while s.wants_more() {
                s.record(false);
                total += 1;
            }
        }
        assert_eq!(total, 7);
    }
}
