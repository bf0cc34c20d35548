//! Trains a router on the synthetic world and reports held-out accuracy
//! against the exact random-routing baseline and the oracle.
//!
//! `cargo run --release --example train_scripted -- [seed]`

use std::path::Path;
use std::time::Instant;

use seqroute::bench::{run_eval, ExperimentConfig, OraclePolicy, ReportTag, Suite};
use seqroute::router::Router;
use seqroute::trainer::train;

fn main() -> seqroute::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/scripted.toml");
    let config = ExperimentConfig::load(&path)?.with_seed(seed);
    let suite = Suite::build(&config)?;
    let hash = config.hash();
    let tag = |policy| ReportTag { name: "train_scripted", policy, seed, config_hash: &hash };

    let baseline = suite.random_baseline(0.5).expect("scripted suite");
    let oracle = run_eval(&suite.env, &OraclePolicy::new(&suite.test_tasks), &suite.test, 4, &tag("oracle"))?;
    let mut router = Router::new(config.router.clone())?;
    let before = run_eval(&suite.env, &router, &suite.test, 4, &tag("untrained"))?;
    println!("random baseline (exact) {baseline:.4}");
    println!("oracle accuracy         {:.4}", oracle.report.accuracy);
    println!("untrained router        {:.4}", before.report.accuracy);

    let start = Instant::now();
    let report = train(&mut router, &suite.env, &suite.train, &config.train, None)?;
    let after = run_eval(&suite.env, &router, &suite.test, 4, &tag("learned"))?;
    println!(
        "trained router          {:.4}  ({} trajectories, {} updates, {:.1}s)",
        after.report.accuracy,
        report.trajectories_used,
        report.optimizer_steps,
        start.elapsed().as_secs_f64()
    );
    println!("mean sequence length    {:.3}", after.report.mean_sequence_length);
    Ok(())
}
