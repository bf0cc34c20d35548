//! Compares the router's analytic policy-gradient loss gradients with
//! central finite differences on a small sampled episode, per parameter.
//!
//! `cargo run --release --example gradient_check`

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqroute::agents::{World, WorldConfig};
use seqroute::encoding::HashTrigramEncoder;
use seqroute::orchestrator::{run_episode, Environment, EpisodeConfig};
use seqroute::router::{Mode, RngNoise, Router, RouterConfig};
use seqroute::trainer::trajectory_gradient;

const STEP: f64 = 1e-6;

fn main() -> seqroute::Result<()> {
    let world = World::new(WorldConfig::default())?;
    let tasks = world.sample_tasks(1, 0, "grad");
    let env = Environment {
        catalog: world.catalog().clone(),
        encoder: Arc::new(HashTrigramEncoder::new(16)?),
        backend: world.backend(&tasks),
        config: EpisodeConfig { t_max: 4, ..EpisodeConfig::default() },
    };
    let config = RouterConfig { embed_dim: 16, d_model: 8, heads: 2, layers: 1, d_ff: 16, ..RouterConfig::default() };
    let mut router = Router::new(config)?;
    let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(1));
    let mut trajectory = run_episode(&tasks[0].to_query(), &env, &router, Mode::Train, &mut noise)?.trajectory;
    trajectory.advantage = 1.0;
    let lambda = 1e-2;
    println!("episode: {:?}", trajectory.steps.iter().map(|s| s.role_id.as_str()).collect::<Vec<_>>());

    let analytic = trajectory_gradient(&router, &trajectory, lambda)?.1;
    let ids: Vec<_> = router.params().ids().collect();
    println!("{:<28} {:>6} {:>12} {:>12}", "parameter", "size", "grad norm", "max rel err");
    for id in ids {
        let name = router.params().name(id).to_string();
        let len = router.params().get(id).len();
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let x = router.params().get(id).values()[k];
            router.params_mut().get_mut(id).values_mut()[k] = x + STEP;
            let up = trajectory_gradient(&router, &trajectory, lambda)?.0;
            router.params_mut().get_mut(id).values_mut()[k] = x - STEP;
            let down = trajectory_gradient(&router, &trajectory, lambda)?.0;
            router.params_mut().get_mut(id).values_mut()[k] = x;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.get(id)[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
        let norm = analytic.get(id).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{name:<28} {len:>6} {norm:>12.3e} {worst:>12.2e}");
    }
    Ok(())
}
