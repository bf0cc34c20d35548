//! Scripted-world soundness by exhaustive enumeration, and the exact
//! random-routing success rate against an independent enumeration.

mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqroute::agents::{malicious_respond, scripted_respond, Route, ScriptedWorld, SyntheticTask, MALICIOUS_ROLE_ID};
use seqroute::bench::{random_success_probability, UniformRandomPolicy};
use seqroute::encoding::HashTrigramEncoder;
use seqroute::orchestrator::{
    compose_prompt, run_episode, Catalog, Environment, EpisodeConfig, HistoryEntry, Query, RoleSpec,
};
use seqroute::router::{Mode, RngNoise};

fn task(chain: &[&str]) -> SyntheticTask {
    SyntheticTask {
        id: "case-0001-abc123".into(),
        query: "[tax law] Case abc123: collect the findings this case needs and report the combined code.".into(),
        family: 0,
        routes: vec![Route {
            roles: chain.iter().map(|s| s.to_string()).collect(),
            clues: (1..=chain.len())
                .map(|p| format!("clue {p}/{} route 0 case abc123: {:08x}", chain.len(), p * 7919))
                .collect(),
        }],
        answer: "code-0123456789ab".into(),
    }
}

fn catalog(ids: &[&str]) -> Catalog {
    let mut roles: Vec<RoleSpec> = ids.iter().map(|id| RoleSpec::new(*id, format!("You are the {id}."))).collect();
    roles.push(RoleSpec::decision("judge", "You are the judge. Give the final answer."));
    Catalog::new(roles).unwrap()
}

fn entry(step: usize, role: &RoleSpec, text: String) -> HistoryEntry {
    HistoryEntry {
        step,
        role_id: role.id.clone(),
        role_index: 0,
        role_prompt: role.role_prompt.clone(),
        response_text: text,
        role_embedding: Vec::new(),
        response_embedding: Vec::new(),
        prompt_tokens_used: 0,
        context_mask_applied: Vec::new(),
    }
}

/// Clue knowledge each agent can produce, tracked as sets rather than text.
#[derive(Clone, Copy)]
struct Symbolic {
    /// Bit `p` set when the entry carries clue `p` of the chain.
    clues: u32,
    poison: bool,
}

struct Soundness<'a> {
    task: &'a SyntheticTask,
    query: Query,
    catalog: &'a Catalog,
    max_agents: usize,
    checked: usize,
}

impl Soundness<'_> {
    fn symbolic(&self, role: &RoleSpec, seen: Symbolic) -> Symbolic {
        if role.id == MALICIOUS_ROLE_ID {
            return Symbolic { clues: 0, poison: true };
        }
        let clues = match self.task.chain().iter().position(|r| *r == role.id) {
            Some(p) if seen.clues & ((1 << p) - 1) == (1 << p) - 1 => 1 << p,
            _ => 0,
        };
        Symbolic { clues, poison: false }
    }

    fn respond(&self, role: &RoleSpec, context: &str) -> String {
        if role.id == MALICIOUS_ROLE_ID {
            malicious_respond(context)
        } else {
            scripted_respond(self.task, role, context)
        }
    }

    fn walk(&mut self, history: &mut Vec<HistoryEntry>, symbols: &mut Vec<Symbolic>) {
        let t = history.len();
        for mask_bits in 0..(1u32 << t) {
            let mask: Vec<bool> = (0..t).map(|j| mask_bits >> j & 1 == 1).collect();
            let seen = symbols.iter().zip(&mask).filter(|(_, m)| **m).fold(
                Symbolic { clues: 0, poison: false },
                |a, (s, _)| Symbolic { clues: a.clues | s.clues, poison: a.poison || s.poison },
            );
            for role in self.catalog.roles() {
                let context = compose_prompt(role, &self.query, history, &mask).context;
                let reply = self.respond(role, &context);
                if role.is_decision {
                    let full = (1 << self.task.chain().len()) - 1;
                    let expected = seen.clues == full && !seen.poison;
                    assert_eq!(reply == self.task.answer, expected, "history {:?} mask {mask:?}", roles_of(history));
                    self.checked += 1;
                    continue;
                }
                if t + 1 == self.max_agents {
                    continue;
                }
                let sym = self.symbolic(role, seen);
                let has_clue: Vec<bool> = self.task.clues().iter().map(|c| reply.contains(c.as_str())).collect();
                let expected: Vec<bool> = (0..self.task.chain().len()).map(|p| sym.clues >> p & 1 == 1).collect();
                assert_eq!(has_clue, expected, "role {} after {:?} mask {mask:?}", role.id, roles_of(history));
                history.push(entry(t + 1, role, reply));
                symbols.push(sym);
                self.walk(history, symbols);
                history.pop();
                symbols.pop();
            }
        }
    }
}

fn roles_of(history: &[HistoryEntry]) -> Vec<&str> {
    history.iter().map(|h| h.role_id.as_str()).collect()
}

#[test]
fn decision_is_correct_exactly_when_the_chain_is_complete_and_unpoisoned() {
    for chain in [vec!["a"], vec!["a", "b"], vec!["b", "a", "c"]] {
        let t = task(&chain);
        let catalog = catalog(&["a", "b", "c", "x", MALICIOUS_ROLE_ID]);
        let mut s = Soundness { query: t.to_query(), task: &t, catalog: &catalog, max_agents: 5, checked: 0 };
        s.walk(&mut Vec::new(), &mut Vec::new());
        assert!(s.checked > 100_000, "only {} decisions checked", s.checked);
    }
}

/// Walks every role sequence and in-window mask of uniform random routing,
/// running the real scripted agents, and sums the probability of a correct
/// decision.
fn enumerate_random(
    t: &SyntheticTask,
    query: &Query,
    catalog: &Catalog,
    t_max: usize,
    window: Option<usize>,
    history: &mut Vec<HistoryEntry>,
) -> f64 {
    let step = history.len() + 1;
    let start = window.map_or(0, |w| history.len().saturating_sub(w));
    let free = history.len() - start;
    let n = catalog.len() as f64;
    let mut total = 0.0;
    for mask_bits in 0..(1u32 << free) {
        let mask: Vec<bool> = (0..history.len()).map(|j| j >= start && mask_bits >> (j - start) & 1 == 1).collect();
        let p_mask = 0.5f64.powi(free as i32);
        for (i, role) in catalog.roles().iter().enumerate() {
            let role = if step == t_max { catalog.get(catalog.decision_index()) } else { role };
            let context = compose_prompt(role, query, history, &mask).context;
            let reply = if role.id == MALICIOUS_ROLE_ID {
                malicious_respond(&context)
            } else {
                scripted_respond(t, role, &context)
            };
            let p = p_mask / n;
            if role.is_decision {
                if reply == t.answer {
                    total += p;
                }
                continue;
            }
            history.push(entry(step, catalog.get(i), reply));
            total += p * enumerate_random(t, query, catalog, t_max, window, history);
            history.pop();
        }
    }
    total
}

#[test]
fn exact_random_baseline_matches_independent_enumeration() {
    let t = task(&["b", "a"]);
    let catalog = catalog(&["a", "b", "x", MALICIOUS_ROLE_ID]);
    for (t_max, window) in [(4, None), (4, Some(2)), (3, None), (5, Some(1))] {
        let oracle = enumerate_random(&t, &t.to_query(), &catalog, t_max, window, &mut Vec::new());
        let exact = random_success_probability(&t, &catalog, t_max, window, 0.5);
        assert!((oracle - exact).abs() < 1e-12, "t_max {t_max} window {window:?}: {oracle} vs {exact}");
        // A one-entry window can never show the judge both clues.
        assert_eq!(oracle > 0.0, window != Some(1));
    }
}

#[test]
fn random_policy_episodes_agree_with_the_exact_rate() {
    let t = task(&["b", "a"]);
    let catalog = catalog(&["a", "b", "x", MALICIOUS_ROLE_ID]);
    let backend = seqroute::agents::RoleDispatch::new(Arc::new(ScriptedWorld::new([t.clone()])))
        .with_role(MALICIOUS_ROLE_ID, Arc::new(seqroute::agents::MaliciousAgent));
    let env = Environment {
        catalog: catalog.clone(),
        encoder: Arc::new(HashTrigramEncoder::new(16).unwrap()),
        backend: Arc::new(backend),
        config: EpisodeConfig { t_max: 4, ..EpisodeConfig::default() },
    };
    let exact = random_success_probability(&t, &catalog, 4, None, 0.5);
    let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(5));
    let draws = 20_000;
    let query = t.to_query();
    let hits = (0..draws)
        .filter(|_| {
            run_episode(&query, &env, &UniformRandomPolicy::default(), Mode::Train, &mut noise)
                .unwrap()
                .trajectory
                .correct
        })
        .count();
    let rate = hits as f64 / draws as f64;
    let sigma = (exact * (1.0 - exact) / draws as f64).sqrt();
    assert!((rate - exact).abs() < 4.0 * sigma, "sampled {rate} vs exact {exact} (sigma {sigma})");
}
