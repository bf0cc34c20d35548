//! Chat-completions client for OpenAI-compatible endpoints.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{AgentBackend, AgentReply, AgentRequest, Usage};
use crate::error::{Error, Result, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. `None` sends no
    /// credential (local servers).
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub temperature: f64,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Token-bucket refill rate. `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
            max_attempts: 3,
            temperature: 1.0,
            backoff_ms: 500,
            max_in_flight: 4,
            requests_per_second: None,
        }
    }
}

/// Token bucket holding at most one second of requests.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        RateLimiter { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct ChatCompletionsBackend {
    config: EndpointConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
    slots: Slots,
}

enum Attempt {
    Retry(String),
    Fatal(TransportError),
}

impl ChatCompletionsBackend {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        if config.base_url.trim().is_empty() || config.model.trim().is_empty() {
            return Err(Error::Config("endpoint needs base_url and model".into()));
        }
        if config.max_attempts == 0 || config.max_in_flight == 0 || config.timeout_secs == 0 {
            return Err(Error::Config("max_attempts, max_in_flight and timeout_secs must be positive".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| TransportError::MissingCredential(var.clone()))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Backend(e.to_string()))?;
        let limiter = config.requests_per_second.map(RateLimiter::new);
        let slots = Slots { free: Mutex::new(config.max_in_flight), cv: Condvar::new() };
        Ok(ChatCompletionsBackend { config, api_key, client, limiter, slots })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Sends `[system, user + context]` and returns the reply and usage.
    pub fn llm_respond(&self, system: &str, user: &str, context: &str) -> Result<AgentReply, TransportError> {
        let content = if context.is_empty() {
            user.to_string()
        } else {
            format!("{user}\n\nResponses from earlier agents:\n{context}")
        };
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
        });
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(16)));
            }
            match self.attempt(&url, &body) {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(TransportError::Exhausted { attempts: self.config.max_attempts, last })
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<AgentReply, Attempt> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let _slot = self.slots.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => parse_reply(&text).map_err(Attempt::Fatal),
            401 | 403 => Err(Attempt::Fatal(TransportError::Auth { status })),
            408 | 429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Attempt::Fatal(TransportError::Rejected { status, body: text })),
        }
    }
}

fn parse_reply(text: &str) -> Result<AgentReply, TransportError> {
    let v: Value = serde_json::from_str(text).map_err(|e| TransportError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))?;
    let field = |name: &str| v.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0) as usize;
    Ok(AgentReply {
        text: content.to_string(),
        usage: Usage { prompt_tokens: field("prompt_tokens"), completion_tokens: field("completion_tokens") },
    })
}

impl AgentBackend for ChatCompletionsBackend {
    fn respond(&self, request: &AgentRequest<'_>) -> Result<AgentReply, TransportError> {
        self.llm_respond(request.system_prompt, request.user_prompt, request.context_block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_content_and_usage() {
        let r = parse_reply(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":10,"completion_tokens":5}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage, Usage { prompt_tokens: 10, completion_tokens: 5 });
        assert!(matches!(parse_reply("{}"), Err(TransportError::Malformed(_))));
        assert!(matches!(parse_reply("not json"), Err(TransportError::Malformed(_))));
    }

    #[test]
    fn missing_credential_is_typed() {
        let cfg = EndpointConfig { api_key_env: Some("SEQROUTE_TEST_UNSET_VAR".into()), ..Default::default() };
        assert!(matches!(
            ChatCompletionsBackend::new(cfg),
            Err(Error::Transport(TransportError::MissingCredential(_)))
        ));
    }

    #[test]
    fn bucket_allows_burst_then_throttles() {
        let l = RateLimiter::new(50.0);
        let t = Instant::now();
        for _ in 0..60 {
            l.acquire();
        }
        assert!(t.elapsed() >= Duration::from_millis(150));
    }
}
