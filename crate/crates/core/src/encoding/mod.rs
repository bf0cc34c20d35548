//! Text embeddings and the router's input sequence.
//!
//! The sequence fed to the router at step `t` is
//! `[query, role_1..role_N, hist_1..hist_{t-1}, nap, ncs]`, each row projected
//! to the model width. The NAP and NCS rows are both computed from the query.

mod encoder;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use encoder::{
    EmbeddingServiceConfig, EmbeddingServiceEncoder, HashTrigramEncoder, TextEncoder, DEFAULT_EMBED_DIM,
};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::orchestrator::HistoryEntry;

/// Which encoder to build, selected by name in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EncoderConfig {
    HashTrigram {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Service(EmbeddingServiceConfig),
}

fn default_dim() -> usize {
    DEFAULT_EMBED_DIM
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::HashTrigram { dim: DEFAULT_EMBED_DIM }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::HashTrigram { dim } => *dim,
            EncoderConfig::Service(c) => c.dim,
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEncoder>> {
        Ok(match self {
            EncoderConfig::HashTrigram { dim } => Box::new(HashTrigramEncoder::new(*dim)?),
            EncoderConfig::Service(c) => Box::new(EmbeddingServiceEncoder::new(c.clone())?),
        })
    }
}

/// Convenience wrapper: embeds `text` as a tensor.
pub fn embed_text(encoder: &dyn TextEncoder, text: &str) -> Result<Tensor> {
    Tensor::vector(encoder.embed(text)?)
}

/// Role embedding followed by response embedding.
pub fn encode_history_entry(entry: &HistoryEntry) -> Result<Vec<f64>> {
    if entry.response_text.trim().is_empty() {
        return Err(Error::Input(format!("history entry {} has no response", entry.step)));
    }
    if entry.role_embedding.len() != entry.response_embedding.len() {
        return Err(Error::Dimension("role and response embeddings differ in width".into()));
    }
    let mut v = Vec::with_capacity(2 * entry.role_embedding.len());
    v.extend_from_slice(&entry.role_embedding);
    v.extend_from_slice(&entry.response_embedding);
    Ok(v)
}

/// Role of a row in the router input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotTag {
    Query,
    /// 1-based role index.
    Role(usize),
    /// 1-based history step.
    Hist(usize),
    Nap,
    Ncs,
}

/// Tags for a sequence with `roles` roles and `history` prior steps.
pub fn slot_tags(roles: usize, history: usize) -> Vec<SlotTag> {
    let mut tags = Vec::with_capacity(roles + history + 3);
    tags.push(SlotTag::Query);
    tags.extend((1..=roles).map(SlotTag::Role));
    tags.extend((1..=history).map(SlotTag::Hist));
    tags.push(SlotTag::Nap);
    tags.push(SlotTag::Ncs);
    tags
}

#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    /// Registers an `inputs → outputs` map initialized uniformly in
    /// `±1/sqrt(inputs)`.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Affine {
            weight: store.add(format!("{name}.weight"), Tensor::matrix(inputs, outputs, w)?)?,
            bias: store.add(format!("{name}.bias"), Tensor::vector(b)?)?,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Input projections into the router width.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionSet {
    pub query: Affine,
    pub role: Affine,
    pub history: Affine,
    pub nap: Affine,
    pub ncs: Affine,
    pub embed_dim: usize,
    pub d_model: usize,
}

impl ProjectionSet {
    pub fn register(store: &mut ParamStore, embed_dim: usize, d_model: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(ProjectionSet {
            query: Affine::register(store, "proj.query", embed_dim, d_model, rng)?,
            role: Affine::register(store, "proj.role", embed_dim, d_model, rng)?,
            history: Affine::register(store, "proj.history", 2 * embed_dim, d_model, rng)?,
            nap: Affine::register(store, "proj.nap", embed_dim, d_model, rng)?,
            ncs: Affine::register(store, "proj.ncs", embed_dim, d_model, rng)?,
            embed_dim,
            d_model,
        })
    }
}

/// Projected router input: one `d_model`-wide row per slot.
#[derive(Debug, Clone)]
pub struct InputSequence {
    pub rows: Var,
    pub tags: Vec<SlotTag>,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Builds `[q̃, r̃_1..r̃_N, h̃_1..h̃_{t-1}, t_nap, t_ncs]` on the graph.
pub fn build_input_sequence(
    g: &mut Graph<'_>,
    query: &[f64],
    roles: &[Vec<f64>],
    history: &[Vec<f64>],
    proj: &ProjectionSet,
) -> Result<InputSequence> {
    let d = proj.embed_dim;
    if roles.is_empty() {
        return Err(Error::Input("router input needs at least one role".into()));
    }
    if query.len() != d || roles.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension(format!("query and role embeddings must be {d} wide")));
    }
    if history.iter().any(|h| h.len() != 2 * d) {
        return Err(Error::Dimension(format!("history embeddings must be {} wide", 2 * d)));
    }
    let q = g.constant(Tensor::matrix(1, d, query.to_vec())?)?;
    let r = g.constant(Tensor::from_rows(roles)?)?;

    let mut parts = Vec::with_capacity(5);
    parts.push(proj.query.apply(g, q)?);
    parts.push(proj.role.apply(g, r)?);
    if !history.is_empty() {
        let h = g.constant(Tensor::from_rows(history)?)?;
        parts.push(proj.history.apply(g, h)?);
    }
    parts.push(proj.nap.apply(g, q)?);
    parts.push(proj.ncs.apply(g, q)?);
    let rows = g.concat_rows(&parts)?;
    Ok(InputSequence { rows, tags: slot_tags(roles.len(), history.len()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, ProjectionSet) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = ProjectionSet::register(&mut store, 8, 4, &mut rng).unwrap();
        (store, proj)
    }

    fn emb(seed: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    #[test]
    fn sequence_lengths_and_tags() {
        let (store, proj) = setup();
        let roles: Vec<_> = (1..=3).map(|i| emb(i as f64, 8)).collect();
        let mut g = Graph::new(&store);
        let seq = build_input_sequence(&mut g, &emb(0.5, 8), &roles, &[], &proj).unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(
            seq.tags,
            vec![SlotTag::Query, SlotTag::Role(1), SlotTag::Role(2), SlotTag::Role(3), SlotTag::Nap, SlotTag::Ncs]
        );
        assert_eq!(g.value(seq.rows).shape(), &[6, 4]);

        let hist: Vec<_> = (0..3).map(|i| emb(i as f64 + 7.0, 16)).collect();
        let seq = build_input_sequence(&mut g, &emb(0.5, 8), &roles, &hist, &proj).unwrap();
        assert_eq!(seq.len(), 9);
        assert_eq!(g.value(seq.rows).shape(), &[9, 4]);
    }

    #[test]
    fn query_change_moves_only_query_nap_ncs() {
        let (store, proj) = setup();
        let roles: Vec<_> = (1..=2).map(|i| emb(i as f64, 8)).collect();
        let hist = vec![emb(9.0, 16)];
        let mut g = Graph::new(&store);
        let a = build_input_sequence(&mut g, &emb(0.5, 8), &roles, &hist, &proj).unwrap();
        let b = build_input_sequence(&mut g, &emb(0.9, 8), &roles, &hist, &proj).unwrap();
        let (ta, tb) = (g.value(a.rows).clone(), g.value(b.rows).clone());
        for (i, tag) in a.tags.iter().enumerate() {
            let same = ta.row(i) == tb.row(i);
            match tag {
                SlotTag::Query | SlotTag::Nap | SlotTag::Ncs => {
                    assert!(!same, "{tag:?} should change")
                }
                _ => assert!(same, "{tag:?} should not change"),
            }
        }
    }

    #[test]
    fn history_entry_concatenation() {
        let u = emb(1.0, 4);
        let v = emb(2.0, 4);
        let entry = HistoryEntry {
            step: 1,
            role_id: "a".into(),
            role_index: 0,
            role_prompt: "a".into(),
            response_text: "ok".into(),
            role_embedding: u.clone(),
            response_embedding: v.clone(),
            prompt_tokens_used: 0,
            context_mask_applied: vec![],
        };
        let h = encode_history_entry(&entry).unwrap();
        assert_eq!(&h[..4], u.as_slice());
        assert_eq!(&h[4..], v.as_slice());

        let missing = HistoryEntry { response_text: " ".into(), ..entry };
        assert!(matches!(encode_history_entry(&missing), Err(Error::Input(_))));
    }
}
