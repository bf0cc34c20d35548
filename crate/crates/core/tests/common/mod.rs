//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use seqroute::agents::{AgentBackend, AgentReply, AgentRequest, Usage};
use seqroute::encoding::HashTrigramEncoder;
use seqroute::numerics::{ParamStore, Tensor};
use seqroute::orchestrator::{Catalog, Environment, EpisodeConfig};
use seqroute::router::RouterConfig;
use seqroute::TransportError;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to round-off are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `analytic` (per parameter slot) and
/// central differences of `loss` over every scalar in `store`.
pub fn max_fd_error(
    store: &mut ParamStore,
    analytic: &[Vec<f64>],
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> (f64, String) {
    let ids: Vec<_> = store.ids().collect();
    let mut worst = (0.0, String::new());
    for id in ids {
        for k in 0..store.get(id).len() {
            let x = store.get(id).values()[k];
            store.get_mut(id).values_mut()[k] = x + FD_STEP;
            let up = loss(store);
            store.get_mut(id).values_mut()[k] = x - FD_STEP;
            let down = loss(store);
            store.get_mut(id).values_mut()[k] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[id.index()][k], numeric);
            if err > worst.0 {
                worst =
                    (err, format!("{}[{k}] analytic {} numeric {numeric}", store.name(id), analytic[id.index()][k]));
            }
        }
    }
    worst
}

pub fn tensor(shape: &[usize], values: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), values).unwrap()
}

pub fn tiny_router(embed_dim: usize, seed: u64) -> RouterConfig {
    RouterConfig { embed_dim, d_model: 8, heads: 2, layers: 1, d_ff: 16, init_seed: seed, ..RouterConfig::default() }
}

/// Replies with a fixed line per role and remembers every context block.
#[derive(Default)]
pub struct EchoBackend {
    pub seen: Mutex<Vec<(String, String)>>,
}

impl EchoBackend {
    pub fn reply_for(role: &str) -> String {
        format!("response of {role}")
    }
}

impl AgentBackend for EchoBackend {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        self.seen.lock().unwrap().push((request.role.id.clone(), request.context_block.to_string()));
        Ok(AgentReply { text: Self::reply_for(&request.role.id), usage: Usage::default() })
    }
}

pub fn echo_env(catalog: Catalog, t_max: usize, embed_dim: usize) -> (Environment, Arc<EchoBackend>) {
    let backend = Arc::new(EchoBackend::default());
    let env = Environment {
        catalog,
        encoder: Arc::new(HashTrigramEncoder::new(embed_dim).unwrap()),
        backend: backend.clone(),
        config: EpisodeConfig { t_max, ..EpisodeConfig::default() },
    };
    (env, backend)
}
