use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result, TransportError};

pub const DEFAULT_EMBED_DIM: usize = 384;

/// Maps text to a fixed-width, unit-norm vector.
///
/// Implementations must be deterministic and safe to share across threads.
pub trait TextEncoder: Send + Sync {
    fn output_dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::Input("cannot embed empty text".into()))
    } else {
        Ok(())
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64 ^ seed;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Feature-hashing encoder over lower-cased character trigrams.
///
/// Each trigram of the space-padded text adds `±1` to one bucket (bucket and
/// sign come from independent FNV-1a hashes); the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashTrigramEncoder {
    dim: usize,
}

impl HashTrigramEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        Ok(HashTrigramEncoder { dim })
    }
}

impl Default for HashTrigramEncoder {
    fn default() -> Self {
        HashTrigramEncoder { dim: DEFAULT_EMBED_DIM }
    }
}

impl TextEncoder for HashTrigramEncoder {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        require_text(text)?;
        let padded: Vec<char> =
            std::iter::once(' ').chain(text.trim().to_lowercase().chars()).chain(std::iter::once(' ')).collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let bytes = &buf[..len];
            let bucket = (fnv1a(bytes.iter().copied(), 0) % self.dim as u64) as usize;
            let sign = if fnv1a(bytes.iter().copied(), 0x9e37_79b9_7f4a_7c15) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if let Some(v) = normalize(v) {
            return Ok(v);
        }
        // Every trigram cancelled out; fall back to a one-hot on the whole text.
        let mut v = vec![0.0; self.dim];
        v[(fnv1a(text.bytes(), 1) % self.dim as u64) as usize] = 1.0;
        Ok(v)
    }
}

/// Settings for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct EmbeddingServiceConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token; unauthenticated if absent.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub dim: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

/// Adapts an external sentence-embedding service to [`TextEncoder`].
///
/// Responses are memoized so repeated texts return identical vectors even if
/// the service is not bit-stable.
pub struct EmbeddingServiceEncoder {
    config: EmbeddingServiceConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingServiceEncoder {
    pub fn new(config: EmbeddingServiceConfig) -> Result<Self> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| TransportError::MissingCredential(var.clone()))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Backend(e.to_string()))?;
        Ok(EmbeddingServiceEncoder { config, api_key, client, cache: Mutex::new(HashMap::new()) })
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&serde_json::json!({ "model": self.config.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Backend(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(TransportError::Auth { status }.into());
        }
        let body = resp.text().map_err(|e| TransportError::Backend(e.to_string()))?;
        if status >= 400 {
            return Err(TransportError::Rejected { status, body }.into());
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| TransportError::Malformed(e.to_string()))?;
        let v = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Malformed("empty embedding list".into()))?
            .embedding;
        if v.len() != self.config.dim {
            return Err(TransportError::Malformed(format!(
                "embedding width {} != configured {}",
                v.len(),
                self.config.dim
            ))
            .into());
        }
        normalize(v).ok_or_else(|| TransportError::Malformed("zero or non-finite embedding".into()).into())
    }
}

impl TextEncoder for EmbeddingServiceEncoder {
    fn output_dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        require_text(text)?;
        if let Some(v) = self.cache.lock().expect("encoder cache poisoned").get(text) {
            return Ok(v.clone());
        }
        let v = self.fetch(text)?;
        self.cache.lock().expect("encoder cache poisoned").insert(text.to_string(), v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_distinct() {
        let e = HashTrigramEncoder::default();
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert_ne!(e.embed("a").unwrap(), e.embed("b").unwrap());
        assert_eq!(e.embed("a").unwrap().len(), 384);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashTrigramEncoder::default();
        assert!(matches!(e.embed("   "), Err(Error::Input(_))));
        assert!(matches!(e.embed(""), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn unit_norm(s in "[a-zA-Z0-9 ,.!?]{1,80}") {
            prop_assume!(!s.trim().is_empty());
            let e = HashTrigramEncoder::default();
            let v = e.embed(&s).unwrap();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
