//! Reference policies and the exact success rate of random routing.

use std::collections::HashMap;

use crate::agents::{SyntheticTask, MALICIOUS_ROLE_ID};
use crate::error::{Error, Result};
use crate::orchestrator::{Catalog, Policy, StepContext};
use crate::router::{window_start, Mode, Noise, StepDecision};

/// Plays each task's required chain with full context, then the decision role.
#[derive(Debug, Clone, Default)]
pub struct OraclePolicy {
    chains: HashMap<String, Vec<String>>,
}

impl OraclePolicy {
    pub fn new(tasks: &[SyntheticTask]) -> Self {
        OraclePolicy { chains: tasks.iter().map(|t| (t.id.clone(), t.chain().to_vec())).collect() }
    }
}

fn fixed(catalog: &Catalog, role_index: usize, mask: Vec<bool>) -> StepDecision {
    let mut scores = vec![0.0; catalog.len()];
    scores[role_index] = 1.0;
    StepDecision {
        role_index,
        scores,
        gates: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        mask,
        nap_logprob: 0.0,
        ncs_logprob: 0.0,
        uniform_choice: false,
        forced: false,
    }
}

impl Policy for OraclePolicy {
    fn decide(&self, ctx: &StepContext<'_>, _mode: Mode, _noise: &mut dyn Noise) -> Result<StepDecision> {
        let chain = self
            .chains
            .get(&ctx.query.id)
            .ok_or_else(|| Error::Input(format!("oracle has no chain for {}", ctx.query.id)))?;
        let role = match chain.get(ctx.step - 1) {
            Some(id) => {
                ctx.catalog.index_of(id).ok_or_else(|| Error::Input(format!("chain role {id} not in catalog")))?
            }
            None => ctx.catalog.decision_index(),
        };
        Ok(fixed(ctx.catalog, role, vec![true; ctx.history.len()]))
    }
}

/// Uniform role choice; each in-window history entry kept with `keep`.
#[derive(Debug, Clone, Copy)]
pub struct UniformRandomPolicy {
    pub keep: f64,
}

impl Default for UniformRandomPolicy {
    fn default() -> Self {
        UniformRandomPolicy { keep: 0.5 }
    }
}

impl Policy for UniformRandomPolicy {
    fn decide(&self, ctx: &StepContext<'_>, _mode: Mode, noise: &mut dyn Noise) -> Result<StepDecision> {
        let n = ctx.catalog.len();
        let role = ((noise.uniform() * n as f64) as usize).min(n - 1);
        let len = ctx.history.len();
        let start = window_start(len, ctx.window_cap);
        let mask = (0..len).map(|j| j >= start && noise.uniform() < self.keep).collect();
        Ok(fixed(ctx.catalog, role, mask))
    }
}

/// Probability that [`UniformRandomPolicy`] solves `task`, by exhaustive
/// enumeration of role sequences and the clue sets each mask exposes.
pub fn random_success_probability(
    task: &SyntheticTask,
    catalog: &Catalog,
    t_max: usize,
    window_cap: Option<usize>,
    keep: f64,
) -> f64 {
    // Clue bits: route r, position p. The last bit marks the forged clue.
    let mut bit = 0;
    let mut route_bits = Vec::new();
    for route in &task.routes {
        let bits: Vec<u64> = (0..route.roles.len())
            .map(|_| {
                let b = 1u64 << bit;
                bit += 1;
                b
            })
            .collect();
        route_bits.push(bits);
    }
    let poison = 1u64 << bit;
    let roles: Vec<Emitter> = catalog
        .roles()
        .iter()
        .map(|r| {
            if r.is_decision {
                Emitter::Decision
            } else if r.id == MALICIOUS_ROLE_ID {
                Emitter::Poison
            } else {
                let mut rules = Vec::new();
                for (route, bits) in task.routes.iter().zip(&route_bits) {
                    if let Some(p) = route.roles.iter().position(|x| *x == r.id) {
                        let need = bits[..p].iter().fold(0, |a, b| a | b);
                        rules.push((need, bits[p]));
                    }
                }
                Emitter::Chain(rules)
            }
        })
        .collect();
    let full: Vec<u64> = route_bits.iter().map(|b| b.iter().fold(0, |a, x| a | x)).collect();
    let world = Enumerator { roles, full, poison, t_max, window_cap, keep, decision: catalog.decision_index() };
    world.walk(&mut Vec::new(), 1)
}

enum Emitter {
    Decision,
    Poison,
    /// `(required bits, emitted bit)` per route.
    Chain(Vec<(u64, u64)>),
}

struct Enumerator {
    roles: Vec<Emitter>,
    full: Vec<u64>,
    poison: u64,
    t_max: usize,
    window_cap: Option<usize>,
    keep: f64,
    decision: usize,
}

impl Enumerator {
    fn walk(&self, history: &mut Vec<u64>, step: usize) -> f64 {
        let n = self.roles.len() as f64;
        let start = window_start(history.len(), self.window_cap);
        // Only entries carrying clues affect what later agents can do.
        let live: Vec<u64> = history[start..].iter().copied().filter(|&h| h != 0).collect();
        let mut visible: Vec<(u64, f64)> = Vec::with_capacity(1 << live.len());
        for subset in 0..(1usize << live.len()) {
            let mut seen = 0;
            let mut p = 1.0;
            for (i, &h) in live.iter().enumerate() {
                if subset >> i & 1 == 1 {
                    seen |= h;
                    p *= self.keep;
                } else {
                    p *= 1.0 - self.keep;
                }
            }
            visible.push((seen, p));
        }
        let mut total = 0.0;
        for choice in 0..self.roles.len() {
            let role = if step == self.t_max { self.decision } else { choice };
            let mut branch = 0.0;
            for &(seen, p) in &visible {
                branch += p * match &self.roles[role] {
                    Emitter::Decision => {
                        let ok = (seen & self.poison) == 0 && self.full.iter().any(|&f| f & !seen == 0);
                        if ok {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Emitter::Poison => self.recurse(history, step, self.poison),
                    Emitter::Chain(rules) => {
                        let emitted = rules.iter().filter(|(need, _)| seen & need == *need).fold(0, |a, (_, b)| a | b);
                        self.recurse(history, step, emitted)
                    }
                };
            }
            total += branch / n;
        }
        total
    }

    fn recurse(&self, history: &mut Vec<u64>, step: usize, emitted: u64) -> f64 {
        history.push(emitted);
        let p = self.walk(history, step + 1);
        history.pop();
        p
    }
}
