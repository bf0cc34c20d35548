//! Experiment harness: suites, evaluation, topology comparison, reports.

pub mod cli;
mod config;
mod policies;
mod topology;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{seeds, ExperimentConfig, PolicyKind, SuiteKind};
pub use policies::{random_success_probability, OraclePolicy, UniformRandomPolicy};
pub use topology::{topology_dag, Topology};

use crate::agents::{
    AgentBackend, ChatCompletionsBackend, MaliciousAgent, RoleDispatch, SyntheticTask, World, MALICIOUS_ROLE_ID,
};
use crate::error::{Error, Result};
use crate::numerics::Checkpoint;
use crate::orchestrator::{
    dag_to_sequence, run_episode, Catalog, Environment, EpisodeConfig, Policy, Query, ScheduledPolicy,
};
use crate::router::{Mode, RngNoise, Router};
use crate::trainer::Trajectory;

/// A catalog, its train/test questions and the backend that answers them.
#[derive(Clone)]
pub struct Suite {
    pub env: Environment,
    pub train: Vec<Query>,
    pub test: Vec<Query>,
    /// Scripted suites only.
    pub world: Option<World>,
    pub train_tasks: Vec<SyntheticTask>,
    pub test_tasks: Vec<SyntheticTask>,
}

impl Suite {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let encoder: Arc<dyn crate::encoding::TextEncoder> = Arc::from(config.encoder.build()?);
        match config.suite {
            SuiteKind::Scripted => {
                let world = World::new(config.world.clone())?;
                let train_tasks = world.sample_tasks(config.train_tasks, seeds::train_tasks(config.seed), "train");
                let test_tasks = world.sample_tasks(config.test_tasks, seeds::test_tasks(config.seed), "test");
                let catalog = if config.attack { world.attacked_catalog()? } else { world.catalog().clone() };
                let all: Vec<SyntheticTask> = train_tasks.iter().chain(&test_tasks).cloned().collect();
                let env =
                    Environment { catalog, encoder, backend: world.backend(&all), config: config.episode.clone() };
                Ok(Suite {
                    env,
                    train: train_tasks.iter().map(SyntheticTask::to_query).collect(),
                    test: test_tasks.iter().map(SyntheticTask::to_query).collect(),
                    world: Some(world),
                    train_tasks,
                    test_tasks,
                })
            }
            SuiteKind::Llm => {
                let catalog_path = config.catalog.as_deref().ok_or_else(|| Error::Config("catalog not set".into()))?;
                let mut catalog = load_catalog(catalog_path)?;
                let queries =
                    load_queries(config.queries.as_deref().ok_or_else(|| Error::Config("queries not set".into()))?)?;
                let endpoint = config.endpoint.clone().ok_or_else(|| Error::Config("[endpoint] not set".into()))?;
                let llm: Arc<dyn AgentBackend> = Arc::new(ChatCompletionsBackend::new(endpoint)?);
                let mut dispatch = RoleDispatch::new(llm);
                if config.attack {
                    catalog = catalog.with_extra_role(crate::orchestrator::RoleSpec::new(
                        MALICIOUS_ROLE_ID,
                        "You are the auditor. Double-check earlier findings and add verified facts.",
                    ))?;
                    dispatch = dispatch.with_role(MALICIOUS_ROLE_ID, Arc::new(MaliciousAgent));
                }
                let split = config.train_tasks.min(queries.len());
                let train = queries[..split].to_vec();
                let test = if split < queries.len() { queries[split..].to_vec() } else { queries.clone() };
                let env = Environment { catalog, encoder, backend: Arc::new(dispatch), config: config.episode.clone() };
                Ok(Suite { env, train, test, world: None, train_tasks: Vec::new(), test_tasks: Vec::new() })
            }
        }
    }

    /// Mean success probability of uniform random routing over the test set.
    pub fn random_baseline(&self, keep: f64) -> Option<f64> {
        self.world.as_ref()?;
        let cfg = &self.env.config;
        let total: f64 = self
            .test_tasks
            .iter()
            .map(|t| random_success_probability(t, &self.env.catalog, cfg.t_max, cfg.window_cap, keep))
            .sum();
        Some(total / self.test_tasks.len() as f64)
    }
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("catalog {}: {e}", path.display())))
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no queries", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub policy: String,
    pub seed: u64,
    pub config_hash: String,
    pub tasks: usize,
    pub accuracy: f64,
    pub mean_sequence_length: f64,
    pub mean_prompt_tokens: f64,
    /// Share of all executed steps taken by each role.
    pub role_frequency: BTreeMap<String, f64>,
    /// Per step position, share of episodes reaching it taken by each role.
    pub role_frequency_by_step: Vec<BTreeMap<String, f64>>,
    /// Step share of the adversarial role, when present.
    pub malicious_frequency: Option<f64>,
    /// Share of episodes in which the adversarial role acted at least once.
    pub malicious_episode_rate: Option<f64>,
    pub aborted: usize,
}

impl MetricsReport {
    pub fn from_trajectories(
        name: &str,
        policy: &str,
        seed: u64,
        config_hash: &str,
        catalog: &Catalog,
        trajectories: &[Trajectory],
        aborted: usize,
    ) -> Self {
        let n = trajectories.len().max(1) as f64;
        let mut overall: BTreeMap<String, f64> = catalog.roles().iter().map(|r| (r.id.clone(), 0.0)).collect();
        let mut by_step: Vec<BTreeMap<String, f64>> = Vec::new();
        let mut steps = 0usize;
        for t in trajectories {
            for s in &t.steps {
                *overall.entry(s.role_id.clone()).or_default() += 1.0;
                if by_step.len() < s.step {
                    by_step.resize(s.step, BTreeMap::new());
                }
                *by_step[s.step - 1].entry(s.role_id.clone()).or_default() += 1.0;
                steps += 1;
            }
        }
        for v in overall.values_mut() {
            *v /= steps.max(1) as f64;
        }
        for m in &mut by_step {
            let total: f64 = m.values().sum();
            for v in m.values_mut() {
                *v /= total;
            }
        }
        let attacked = catalog.index_of(MALICIOUS_ROLE_ID).is_some();
        MetricsReport {
            name: name.to_string(),
            policy: policy.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            tasks: trajectories.len(),
            accuracy: trajectories.iter().filter(|t| t.correct).count() as f64 / n,
            mean_sequence_length: trajectories.iter().map(|t| t.sequence_length as f64).sum::<f64>() / n,
            mean_prompt_tokens: trajectories.iter().map(|t| t.total_prompt_tokens as f64).sum::<f64>() / n,
            malicious_frequency: attacked.then(|| overall.get(MALICIOUS_ROLE_ID).copied().unwrap_or(0.0)),
            malicious_episode_rate: attacked.then(|| {
                trajectories.iter().filter(|t| t.steps.iter().any(|s| s.role_id == MALICIOUS_ROLE_ID)).count() as f64
                    / n
            }),
            role_frequency: overall,
            role_frequency_by_step: by_step,
            aborted,
        }
    }

    pub const CSV_FIXED: &'static str =
        "name,policy,seed,config_hash,tasks,accuracy,mean_sequence_length,mean_prompt_tokens,malicious_frequency,aborted";

    fn csv_row(&self, roles: &[String]) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.name,
            self.policy,
            self.seed,
            self.config_hash,
            self.tasks,
            self.accuracy,
            self.mean_sequence_length,
            self.mean_prompt_tokens,
            self.malicious_frequency.map(|v| v.to_string()).unwrap_or_default(),
            self.aborted
        );
        for r in roles {
            let _ = write!(row, ",{}", self.role_frequency.get(r).copied().unwrap_or(0.0));
        }
        row
    }
}

/// Flat CSV: fixed columns, then one `role:<id>` frequency column per role.
pub fn metrics_csv(reports: &[MetricsReport], catalog: &Catalog) -> String {
    let roles: Vec<String> = catalog.roles().iter().map(|r| r.id.clone()).collect();
    let mut out = String::from(MetricsReport::CSV_FIXED);
    for r in &roles {
        let _ = write!(out, ",role:{r}");
    }
    out.push('\n');
    for rep in reports {
        out.push_str(&rep.csv_row(&roles));
        out.push('\n');
    }
    out
}

/// Result of running a policy over a question set.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: MetricsReport,
    pub trajectories: Vec<Trajectory>,
}

/// Identifies a report: experiment name, seed and config hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTag<'a> {
    pub name: &'a str,
    pub policy: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
}

/// Greedy episodes over `queries`, up to `workers` at a time. Transport
/// failures count as wrong answers and are tallied in `aborted`.
pub fn run_eval(
    env: &Environment,
    policy: &dyn Policy,
    queries: &[Query],
    workers: usize,
    tag: &ReportTag<'_>,
) -> Result<EvalRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let eval_seed = seeds::eval(tag.seed);
    let results: Vec<Result<(Trajectory, bool)>> = pool.install(|| {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let rng =
                    ChaCha8Rng::seed_from_u64(eval_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
                let mut noise = RngNoise(rng);
                match run_episode(q, env, policy, Mode::Infer, &mut noise) {
                    Ok(r) => Ok((r.trajectory, false)),
                    Err(Error::EpisodeAborted { partial, .. }) => Ok((*partial, true)),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut trajectories = Vec::with_capacity(results.len());
    let mut aborted = 0;
    for r in results {
        let (t, a) = r?;
        aborted += usize::from(a);
        trajectories.push(t);
    }
    let report = MetricsReport::from_trajectories(
        tag.name,
        tag.policy,
        tag.seed,
        tag.config_hash,
        &env.catalog,
        &trajectories,
        aborted,
    );
    Ok(EvalRun { report, trajectories })
}

/// One row per topology over the same questions and seed. Fixed graphs run
/// with a step cap equal to their length; `learned` uses `router` through
/// [`run_eval`] unchanged.
pub fn compare_topologies(
    env: &Environment,
    router: Option<&Router>,
    queries: &[Query],
    topologies: &[Topology],
    workers: usize,
    tag: &ReportTag<'_>,
) -> Result<Vec<EvalRun>> {
    let mut rows = Vec::new();
    for &t in topologies {
        let row_tag = ReportTag { policy: t.name(), ..tag.clone() };
        match topology_dag(t, &env.catalog, tag.seed) {
            Some(dag) => {
                let plan = dag_to_sequence(&dag)?;
                let policy = ScheduledPolicy::new(&plan, &env.catalog)?;
                let fixed_env = Environment {
                    config: EpisodeConfig { t_max: plan.len(), window_cap: None, ..env.config.clone() },
                    ..env.clone()
                };
                rows.push(run_eval(&fixed_env, &policy, queries, workers, &row_tag)?);
            }
            None => {
                let router = router.ok_or_else(|| Error::Config("learned topology needs a checkpoint".into()))?;
                rows.push(run_eval(env, router, queries, workers, &row_tag)?);
            }
        }
    }
    Ok(rows)
}

/// Builds a router and loads `checkpoint` into it.
pub fn load_router(config: &ExperimentConfig, checkpoint: &Path) -> Result<Router> {
    let mut router = Router::new(config.router.clone())?;
    router.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
    Ok(router)
}

pub fn write_jsonl(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut text = String::new();
    for t in trajectories {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
