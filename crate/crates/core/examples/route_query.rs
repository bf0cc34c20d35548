//! Trains a router briefly, then shows the role sequence, context gates and
//! masks it picks for a few held-out questions.
//!
//! `cargo run --release --example route_query -- [seed]`

use std::path::Path;

use seqroute::bench::{ExperimentConfig, Suite};
use seqroute::orchestrator::run_episode;
use seqroute::router::{Mode, Router, ZeroNoise};
use seqroute::trainer::train;

fn main() -> seqroute::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/efficiency.toml");
    let config = ExperimentConfig::load(&path)?.with_seed(seed);
    let suite = Suite::build(&config)?;
    let mut router = Router::new(config.router.clone())?;
    train(&mut router, &suite.env, &suite.train, &config.train, None)?;

    for (query, task) in suite.test.iter().zip(&suite.test_tasks).take(3) {
        println!("{}", query.text);
        println!("  short route {:?}", task.chain());
        let result = run_episode(query, &suite.env, &router, Mode::Infer, &mut ZeroNoise)?;
        for s in &result.trajectory.steps {
            let gates: Vec<String> = s.decision.gates.iter().map(|g| format!("{g:.2}")).collect();
            let kept: Vec<usize> = s.decision.mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j + 1).collect();
            println!("  step {}: {:<14} gates [{}] keeps {kept:?}", s.step, s.role_id, gates.join(", "));
        }
        println!("  answer {} ({})", result.final_answer, if result.trajectory.correct { "correct" } else { "wrong" });
    }
    Ok(())
}
