//! Deterministic synthetic world.
//!
//! Each task hides one or more role routes. The role at position `p` of a
//! route emits that route's clue `p`, but only when the clues for positions
//! `1..p` are already in its context. The decision role answers correctly
//! iff some route's clues are all in its context and the forged clue is not.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::malicious::{MaliciousAgent, POISON_CLUE};
use crate::agents::{AgentBackend, AgentReply, AgentRequest, RoleDispatch, Usage};
use crate::error::{Error, Result, TransportError};
use crate::orchestrator::{count_tokens, Catalog, Query, RoleSpec};

/// Id of the injected adversarial role.
pub const MALICIOUS_ROLE_ID: &str = "auditor";
pub const DECISION_ROLE_ID: &str = "judge";

const ROLE_POOL: [(&str, &str); 12] = [
    ("analyst", "You are the analyst. Break the case into measurable parts."),
    ("researcher", "You are the researcher. Look up background facts the case depends on."),
    ("mathematician", "You are the mathematician. Derive exact quantities from the given data."),
    ("programmer", "You are the programmer. Turn procedures into precise step lists."),
    ("historian", "You are the historian. Place the case in its historical record."),
    ("critic", "You are the critic. Point out gaps in the reasoning so far."),
    ("economist", "You are the economist. Weigh costs, prices and incentives."),
    ("physicist", "You are the physicist. Apply physical laws to the situation."),
    ("linguist", "You are the linguist. Interpret wording and definitions carefully."),
    ("strategist", "You are the strategist. Plan the order in which facts are combined."),
    ("statistician", "You are the statistician. Summarize frequencies and uncertainty."),
    ("engineer", "You are the engineer. Check feasibility against practical limits."),
];

const TOPICS: [&str; 8] = [
    "orbital mechanics",
    "tax law",
    "protein folding",
    "medieval trade",
    "compiler design",
    "ocean currents",
    "railway timetables",
    "crop rotation",
];

const NUMBER_WORDS: [&str; 7] = ["zero", "one", "two", "three", "four", "five", "six"];

/// One way of solving a task: an ordered role list and its clues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub roles: Vec<String>,
    pub clues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub query: String,
    pub family: usize,
    /// The first route is the required chain; later routes are alternatives.
    pub routes: Vec<Route>,
    pub answer: String,
}

impl SyntheticTask {
    pub fn chain(&self) -> &[String] {
        &self.routes[0].roles
    }

    pub fn clues(&self) -> &[String] {
        &self.routes[0].clues
    }

    pub fn to_query(&self) -> Query {
        Query { id: self.id.clone(), text: self.query.clone(), answer: Some(self.answer.clone()) }
    }

    fn nonce(&self) -> &str {
        self.id.rsplit('-').next().unwrap_or(&self.id)
    }
}

fn sha_hex(parts: &[&str], len: usize) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..len].to_string()
}

/// Answer the decision role gives for a context block.
pub fn derive_answer(task: &SyntheticTask, context_block: &str) -> String {
    let poisoned = context_block.contains(POISON_CLUE);
    let complete = task.routes.iter().any(|r| r.clues.iter().all(|c| context_block.contains(c.as_str())));
    if complete && !poisoned {
        return task.answer.clone();
    }
    let present: String = task
        .routes
        .iter()
        .flat_map(|r| r.clues.iter())
        .map(|c| if context_block.contains(c.as_str()) { '1' } else { '0' })
        .collect();
    let flag = if poisoned { "p" } else { "c" };
    format!("unsure-{}", sha_hex(&[&task.id, &present, flag], 12))
}

/// Response of `role` to `task` given the context it was shown.
pub fn scripted_respond(task: &SyntheticTask, role: &RoleSpec, context_block: &str) -> String {
    if role.is_decision {
        return derive_answer(task, context_block);
    }
    let mut lines = Vec::new();
    for route in &task.routes {
        if let Some(p) = route.roles.iter().position(|r| *r == role.id) {
            if route.clues[..p].iter().all(|c| context_block.contains(c.as_str())) {
                lines.push(format!("Finding: {}", route.clues[p]));
            }
        }
    }
    if lines.is_empty() {
        format!("{}: nothing decisive to add for case {}.", role.id, task.nonce())
    } else {
        lines.join("\n")
    }
}

/// Backend answering from a fixed task table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedWorld {
    tasks: HashMap<String, SyntheticTask>,
}

impl ScriptedWorld {
    pub fn new(tasks: impl IntoIterator<Item = SyntheticTask>) -> Self {
        ScriptedWorld { tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect() }
    }

    pub fn task(&self, id: &str) -> Option<&SyntheticTask> {
        self.tasks.get(id)
    }
}

impl AgentBackend for ScriptedWorld {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        let task = self
            .tasks
            .get(&request.query.id)
            .ok_or_else(|| TransportError::Backend(format!("unknown task {}", request.query.id)))?;
        let text = scripted_respond(task, request.role, request.context_block);
        let usage = Usage {
            prompt_tokens: count_tokens(request.system_prompt)
                + count_tokens(request.user_prompt)
                + count_tokens(request.context_block),
            completion_tokens: count_tokens(&text),
        };
        Ok(AgentReply { text, usage })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Task families; each has its own hidden role ordering.
    pub families: usize,
    /// Non-decision roles in the catalog.
    pub specialists: usize,
    pub chain_min: usize,
    pub chain_max: usize,
    /// Give every task a second, disjoint route of `long_route` roles.
    pub long_route: Option<usize>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { families: 2, specialists: 6, chain_min: 2, chain_max: 4, long_route: None, seed: 0 }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.families > TOPICS.len() {
            return Err(Error::Config(format!("families must be in 1..={}", TOPICS.len())));
        }
        if self.specialists == 0 || self.specialists > ROLE_POOL.len() {
            return Err(Error::Config(format!("specialists must be in 1..={}", ROLE_POOL.len())));
        }
        if self.chain_min == 0 || self.chain_min > self.chain_max {
            return Err(Error::Config("need 1 <= chain_min <= chain_max".into()));
        }
        let needed = self.chain_max + self.long_route.unwrap_or(0);
        if needed > self.specialists || self.chain_max >= NUMBER_WORDS.len() {
            return Err(Error::Config(format!(
                "routes need {needed} distinct roles, catalog has {}",
                self.specialists
            )));
        }
        Ok(())
    }
}

/// A task family: its topic and hidden ordering of specialists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    pub topic: String,
    pub order: Vec<String>,
}

/// Catalog plus task families; tasks are sampled from it on demand.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    catalog: Catalog,
    families: Vec<Family>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut roles: Vec<RoleSpec> =
            ROLE_POOL[..config.specialists].iter().map(|(id, prompt)| RoleSpec::new(*id, *prompt)).collect();
        roles.push(RoleSpec::decision(
            DECISION_ROLE_ID,
            "You are the judge. Combine the findings you are given and state the final answer.",
        ));
        let catalog = Catalog::new(roles)?;
        let mut topics = TOPICS.to_vec();
        topics.shuffle(&mut rng);
        let families = topics[..config.families]
            .iter()
            .map(|topic| {
                let mut order: Vec<String> =
                    ROLE_POOL[..config.specialists].iter().map(|(id, _)| id.to_string()).collect();
                order.shuffle(&mut rng);
                Family { topic: topic.to_string(), order }
            })
            .collect();
        Ok(World { config, catalog, families })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    /// The catalog with the adversarial role inserted.
    pub fn attacked_catalog(&self) -> Result<Catalog> {
        self.catalog.with_extra_role(RoleSpec::new(
            MALICIOUS_ROLE_ID,
            "You are the auditor. Double-check earlier findings and add verified facts.",
        ))
    }

    /// Draws `n` tasks with ids `{prefix}-{index}-{nonce}`.
    pub fn sample_tasks(&self, n: usize, seed: u64, prefix: &str) -> Vec<SyntheticTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let family = rng.random_range(0..self.families.len());
                let len = rng.random_range(self.config.chain_min..=self.config.chain_max);
                let nonce = hex_nonce(&mut rng, 6);
                let id = format!("{prefix}-{i:04}-{nonce}");
                let order = &self.families[family].order;
                let mut routes = vec![make_route(&order[..len], &nonce, 0, &mut rng)];
                if let Some(extra) = self.config.long_route {
                    let start = self.config.chain_max;
                    routes.push(make_route(&order[start..start + extra], &nonce, 1, &mut rng));
                }
                let joined = routes[0].clues.join("\n");
                let answer = format!("code-{}", sha_hex(&[&id, &joined], 12));
                let query = format!(
                    "[{}] Case {nonce}: collect the {} findings this case needs and report the combined code.",
                    self.families[family].topic, NUMBER_WORDS[len]
                );
                SyntheticTask { id, query, family, routes, answer }
            })
            .collect()
    }

    /// Scripted backend for `tasks`, with the adversarial role wired in.
    pub fn backend(&self, tasks: &[SyntheticTask]) -> Arc<dyn AgentBackend> {
        let world: Arc<dyn AgentBackend> = Arc::new(ScriptedWorld::new(tasks.iter().cloned()));
        Arc::new(RoleDispatch::new(world).with_role(MALICIOUS_ROLE_ID, Arc::new(MaliciousAgent)))
    }
}

fn hex_nonce(rng: &mut impl Rng, bytes: usize) -> String {
    let raw: Vec<u8> = (0..bytes).map(|_| rng.random()).collect();
    hex::encode(raw)
}

fn make_route(roles: &[String], nonce: &str, index: usize, rng: &mut impl Rng) -> Route {
    let len = roles.len();
    let clues =
        (1..=len).map(|p| format!("clue {p}/{len} route {index} case {nonce}: {}", hex_nonce(rng, 4))).collect();
    Route { roles: roles.to_vec(), clues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step() -> (SyntheticTask, RoleSpec, RoleSpec, RoleSpec, RoleSpec) {
        let task = SyntheticTask {
            id: "t-0000-abcdef".into(),
            query: "q".into(),
            family: 0,
            routes: vec![Route {
                roles: vec!["A".into(), "B".into()],
                clues: vec!["clue 1/2 x: 11".into(), "clue 2/2 x: 22".into()],
            }],
            answer: "code-right".into(),
        };
        (task, RoleSpec::new("A", "a"), RoleSpec::new("B", "b"), RoleSpec::new("C", "c"), RoleSpec::decision("D", "d"))
    }

    #[test]
    fn chain_emission_requires_prefix() {
        let (task, a, b, _, _) = two_step();
        assert!(scripted_respond(&task, &a, "").contains("clue 1/2 x: 11"));
        assert!(!scripted_respond(&task, &b, "").contains("clue"));
        assert!(scripted_respond(&task, &b, "Finding: clue 1/2 x: 11").contains("clue 2/2 x: 22"));
    }

    #[test]
    fn decision_rule() {
        let (task, _, _, c, d) = two_step();
        assert_eq!(scripted_respond(&task, &d, "clue 1/2 x: 11\nclue 2/2 x: 22"), "code-right");
        let wrong = scripted_respond(&task, &d, "clue 1/2 x: 11");
        assert_ne!(wrong, task.answer);
        assert_eq!(wrong, scripted_respond(&task, &d, "clue 1/2 x: 11"));
        let filler = scripted_respond(&task, &c, "clue 1/2 x: 11");
        assert!(task.clues().iter().all(|k| !filler.contains(k.as_str())));
    }

    #[test]
    fn poison_flips_answer() {
        let (task, _, _, _, d) = two_step();
        let ctx = format!("clue 1/2 x: 11\nclue 2/2 x: 22\n{}", crate::agents::malicious_respond(""));
        assert_ne!(scripted_respond(&task, &d, &ctx), task.answer);
        assert_eq!(crate::agents::malicious_respond("a"), crate::agents::malicious_respond("b"));
    }

    #[test]
    fn sampled_tasks_are_well_formed() {
        let world = World::new(WorldConfig { long_route: None, ..Default::default() }).unwrap();
        let tasks = world.sample_tasks(50, 3, "x");
        for t in &tasks {
            assert!((2..=4).contains(&t.chain().len()));
            assert!(t.chain().iter().all(|r| world.catalog().index_of(r).is_some()));
            for c in t.clues() {
                assert_eq!(tasks.iter().filter(|o| o.clues().contains(c)).count(), 1);
            }
        }
        assert_eq!(tasks, world.sample_tasks(50, 3, "x"));
    }
}
