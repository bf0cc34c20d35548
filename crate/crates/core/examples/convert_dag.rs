//! Turns a communication DAG into an agent sequence with context masks and
//! replays it on a synthetic task.
//!
//! `cargo run --example convert_dag`

use std::sync::Arc;

use seqroute::agents::{World, WorldConfig};
use seqroute::encoding::HashTrigramEncoder;
use seqroute::orchestrator::{dag_to_sequence, run_episode, Dag, Environment, EpisodeConfig, ScheduledPolicy};
use seqroute::router::{Mode, ZeroNoise};

fn main() -> seqroute::Result<()> {
    let world = World::new(WorldConfig { families: 1, chain_min: 2, chain_max: 2, ..WorldConfig::default() })?;
    let task = world.sample_tasks(1, 0, "dag").remove(0);
    let (first, second) = (&task.chain()[0], &task.chain()[1]);
    let others: Vec<&String> =
        world.catalog().roles().iter().map(|r| &r.id).filter(|id| *id != first && *id != second).take(2).collect();

    // Both required roles feed the judge, and the second also hears the first.
    let json = serde_json::json!({
        "nodes": [first, others[0], second, others[1], {"id": "final", "role": "judge"}],
        "adjacency": {
            first.as_str(): [second, "final"],
            others[0].as_str(): [second],
            second.as_str(): ["final"],
            others[1].as_str(): ["final"],
        }
    });
    let plan = dag_to_sequence(&Dag::from_json(&json.to_string())?)?;
    for (step, (role, mask)) in plan.roles.iter().zip(&plan.masks).enumerate() {
        println!("step {}: {role:<14} sees steps {mask:?}", step + 1);
    }

    let env = Environment {
        catalog: world.catalog().clone(),
        encoder: Arc::new(HashTrigramEncoder::default()),
        backend: world.backend(std::slice::from_ref(&task)),
        config: EpisodeConfig { t_max: plan.len(), ..EpisodeConfig::default() },
    };
    let policy = ScheduledPolicy::new(&plan, &env.catalog)?;
    let result = run_episode(&task.to_query(), &env, &policy, Mode::Infer, &mut ZeroNoise)?;
    println!("final answer {} ({})", result.final_answer, if result.trajectory.correct { "correct" } else { "wrong" });
    Ok(())
}
