//! Routes real LLM agents behind an OpenAI-compatible endpoint with an
//! untrained router, recording every exchange to a cassette that can be
//! replayed offline.
//!
//! `OPENAI_API_KEY=... cargo run --example llm_endpoint -- [base_url] [model]`
//! `cargo run --example llm_endpoint -- --replay cassette.json`

use std::path::Path;
use std::sync::Arc;

use seqroute::agents::{
    AgentBackend, Cassette, ChatCompletionsBackend, EndpointConfig, RecordingBackend, ReplayBackend,
};
use seqroute::bench::{load_catalog, load_queries};
use seqroute::encoding::{HashTrigramEncoder, TextEncoder};
use seqroute::orchestrator::{run_episode, Environment, EpisodeConfig};
use seqroute::router::{Mode, Router, RouterConfig, ZeroNoise};

fn main() -> seqroute::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let catalog = load_catalog(&configs.join("llm_catalog.json"))?;
    let queries = load_queries(&configs.join("llm_queries.jsonl"))?;

    let (backend, recorder): (Arc<dyn AgentBackend>, _) = if args.first().map(String::as_str) == Some("--replay") {
        let cassette = Cassette::load(Path::new(args.get(1).expect("--replay needs a path")))?;
        (Arc::new(ReplayBackend::new(&cassette)), None)
    } else {
        let mut endpoint = EndpointConfig::default();
        if let Some(url) = args.first() {
            endpoint.base_url = url.clone();
        }
        if let Some(model) = args.get(1) {
            endpoint.model = model.clone();
        }
        let recorder = Arc::new(RecordingBackend::new(ChatCompletionsBackend::new(endpoint)?));
        (recorder.clone(), Some(recorder))
    };

    let encoder = HashTrigramEncoder::default();
    let router = Router::new(RouterConfig { embed_dim: encoder.output_dim(), ..RouterConfig::default() })?;
    let env = Environment { catalog, encoder: Arc::new(encoder), backend, config: EpisodeConfig::default() };
    for query in queries.iter().take(2) {
        let result = run_episode(query, &env, &router, Mode::Infer, &mut ZeroNoise)?;
        let roles: Vec<&str> = result.trajectory.steps.iter().map(|s| s.role_id.as_str()).collect();
        println!("{}: {roles:?} -> {:?} ({} prompt tokens)", query.id, result.final_answer, result.total_prompt_tokens);
    }
    if let Some(recorder) = recorder {
        recorder.cassette().save(Path::new("cassette.json"))?;
        println!("recorded cassette.json");
    }
    Ok(())
}
