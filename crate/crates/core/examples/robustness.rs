//! Trains with and without an adversarial role in the catalog and reports
//! how often the learned router calls it.
//!
//! `cargo run --release --example robustness -- [seed]`

use std::path::Path;

use seqroute::bench::{run_eval, ExperimentConfig, ReportTag, Suite};
use seqroute::router::Router;
use seqroute::trainer::train;

fn main() -> seqroute::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/robustness.toml");
    let attacked = ExperimentConfig::load(&path)?.with_seed(seed);
    let clean = ExperimentConfig { attack: false, ..attacked.clone() };
    let hash = attacked.hash();
    let tag = ReportTag { name: "robustness", policy: "learned", seed, config_hash: &hash };

    let clean_suite = Suite::build(&clean)?;
    let attacked_suite = Suite::build(&attacked)?;
    let mut clean_router = Router::new(clean.router.clone())?;
    train(&mut clean_router, &clean_suite.env, &clean_suite.train, &clean.train, None)?;
    let mut attacked_router = Router::new(attacked.router.clone())?;
    train(&mut attacked_router, &attacked_suite.env, &attacked_suite.train, &attacked.train, None)?;

    let rows = [
        ("clean-trained, clean catalog", &clean_router, &clean_suite),
        ("clean-trained, attacker present", &clean_router, &attacked_suite),
        ("attack-trained, attacker present", &attacked_router, &attacked_suite),
    ];
    for (label, router, suite) in rows {
        let r = run_eval(&suite.env, router, &suite.test, attacked.workers, &tag)?.report;
        let malicious = r.malicious_frequency.map_or("-".to_string(), |f| format!("{f:.3}"));
        println!("{label:<34} accuracy {:.3}  attacker selection {malicious}", r.accuracy);
    }
    Ok(())
}
