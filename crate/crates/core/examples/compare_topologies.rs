//! Fixed communication graphs (chain, star, tree, complete, random) against
//! a trained router on the same held-out questions.
//!
//! Fixed graphs visit roles in catalog order. Scripted agents only add their
//! finding after seeing the earlier findings of a route, so a graph that
//! ignores the route order usually scores zero in this world.
//!
//! `cargo run --release --example compare_topologies -- [seed]`

use std::path::Path;

use seqroute::bench::{compare_topologies, ExperimentConfig, ReportTag, Suite, Topology};
use seqroute::router::Router;
use seqroute::trainer::train;

fn main() -> seqroute::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/efficiency_baseline.toml");
    let config = ExperimentConfig::load(&path)?.with_seed(seed);
    let suite = Suite::build(&config)?;
    let mut router = Router::new(config.router.clone())?;
    train(&mut router, &suite.env, &suite.train, &config.train, None)?;

    let hash = config.hash();
    let tag = ReportTag { name: "topologies", policy: "", seed, config_hash: &hash };
    let rows = compare_topologies(&suite.env, Some(&router), &suite.test, &Topology::ALL, config.workers, &tag)?;
    println!("{:<9} {:>8} {:>8} {:>8}", "topology", "accuracy", "length", "tokens");
    for row in rows {
        let r = row.report;
        println!("{:<9} {:>8.3} {:>8.2} {:>8.1}", r.policy, r.accuracy, r.mean_sequence_length, r.mean_prompt_tokens);
    }
    Ok(())
}
