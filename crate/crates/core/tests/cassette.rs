//! A recorded cassette stands in for the backend it recorded.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqroute::agents::{Cassette, RecordingBackend, ReplayBackend, World, WorldConfig};
use seqroute::bench::UniformRandomPolicy;
use seqroute::encoding::HashTrigramEncoder;
use seqroute::orchestrator::{run_episode, Environment, EpisodeConfig};
use seqroute::router::{Mode, RngNoise};
use seqroute::{Error, TransportError};

fn env(world: &World, backend: Arc<dyn seqroute::agents::AgentBackend>) -> Environment {
    Environment {
        catalog: world.attacked_catalog().unwrap(),
        encoder: Arc::new(HashTrigramEncoder::new(32).unwrap()),
        backend,
        config: EpisodeConfig::default(),
    }
}

fn run_all(env: &Environment, queries: &[seqroute::orchestrator::Query]) -> Vec<String> {
    let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(3));
    queries
        .iter()
        .map(|q| {
            let r = run_episode(q, env, &UniformRandomPolicy::default(), Mode::Train, &mut noise).unwrap();
            serde_json::to_string(&r.trajectory).unwrap()
        })
        .collect()
}

#[test]
fn replay_reproduces_recorded_episodes() {
    let world = World::new(WorldConfig { seed: 9, ..WorldConfig::default() }).unwrap();
    let tasks = world.sample_tasks(6, 1, "rec");
    let queries: Vec<_> = tasks.iter().map(|t| t.to_query()).collect();
    let recorder = Arc::new(RecordingBackend::new(world.backend(&tasks)));
    let live = run_all(&env(&world, recorder.clone()), &queries);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cassette.json");
    recorder.cassette().save(&path).unwrap();
    let cassette = Cassette::load(&path).unwrap();
    assert!(!cassette.interactions.is_empty());

    let replayed = run_all(&env(&world, Arc::new(ReplayBackend::new(&cassette))), &queries);
    assert_eq!(live, replayed);
}

#[test]
fn unrecorded_request_aborts_the_episode() {
    let world = World::new(WorldConfig::default()).unwrap();
    let tasks = world.sample_tasks(2, 1, "rec");
    let env = env(&world, Arc::new(ReplayBackend::new(&Cassette::default())));
    let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(0));
    let err =
        run_episode(&tasks[0].to_query(), &env, &UniformRandomPolicy::default(), Mode::Train, &mut noise).unwrap_err();
    match err {
        Error::EpisodeAborted { step: 1, source: TransportError::CassetteMiss(_), partial } => {
            assert!(partial.steps.is_empty())
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn foreign_cassette_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"format":"other","version":1,"interactions":[]}"#).unwrap();
    assert!(matches!(Cassette::load(&path), Err(Error::Input(_))));
    assert!(matches!(Cassette::load(&dir.path().join("absent.json")), Err(Error::MissingFile(_))));
}
