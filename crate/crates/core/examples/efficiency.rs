//! Standard versus efficiency training on a world where every task has a
//! 2-role route and a 4-role alternative.
//!
//! `cargo run --release --example efficiency -- [seed]`

use std::path::Path;

use seqroute::bench::{run_eval, ExperimentConfig, ReportTag, Suite};
use seqroute::router::Router;
use seqroute::trainer::train;

fn main() -> seqroute::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    println!("{:<10} {:>8} {:>8} {:>8} {:>6} {:>7}", "variant", "accuracy", "length", "tokens", "gamma", "window");
    for file in ["efficiency_baseline.toml", "efficiency.toml"] {
        let config = ExperimentConfig::load(&configs.join(file))?.with_seed(seed);
        let suite = Suite::build(&config)?;
        let mut router = Router::new(config.router.clone())?;
        train(&mut router, &suite.env, &suite.train, &config.train, None)?;
        let hash = config.hash();
        let tag = ReportTag { name: &config.name, policy: "learned", seed, config_hash: &hash };
        let run = run_eval(&suite.env, &router, &suite.test, config.workers, &tag)?;
        let r = &run.report;
        println!(
            "{:<10} {:>8.3} {:>8.3} {:>8.1} {:>6} {:>7}",
            format!("{:?}", config.train.variant).to_lowercase(),
            r.accuracy,
            r.mean_sequence_length,
            r.mean_prompt_tokens,
            config.train.gamma,
            config.episode.window_cap.map_or("none".to_string(), |w| w.to_string()),
        );
    }
    Ok(())
}
