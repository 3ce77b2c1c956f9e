//! OpenAI-compatible HTTP adapter.
//!
//! One POST per call. Both the legacy completions response (`text`,
//! `logprobs.tokens`, `logprobs.token_logprobs`, `logprobs.top_logprobs`) and
//! the chat response (`message.content`, `logprobs.content[]`) are decoded.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    binary_from_candidates, normalize_embedding, ApiStyle, Backend, BackendConfig, BackendError, BinaryScore, Embedder,
};
use crate::records::{Generation, TokenLogprob};

/// Decoded body of a completion response.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Per-token log-probabilities, `None` when the backend sent none.
    pub tokens: Option<Vec<TokenLogprob>>,
    /// Candidate (token, logprob) lists per position.
    pub top: Option<Vec<Vec<(String, f64)>>>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
    #[serde(default)]
    content: Option<Vec<WireContentToken>>,
}

#[derive(Deserialize)]
struct WireContentToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    token: String,
    logprob: f64,
}

fn checked_logprob(lp: f64) -> Result<f64, BackendError> {
    if lp.is_finite() {
        // backends occasionally report +0.0000001 for certain tokens
        Ok(lp.min(0.0))
    } else {
        Err(BackendError::Decode(format!("non-finite logprob {lp}")))
    }
}

/// Decodes a completion response body.
pub fn parse_completion(body: &str) -> Result<Completion, BackendError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    let choice =
        wire.choices.into_iter().next().ok_or_else(|| BackendError::Decode("response has no choices".into()))?;
    let text = choice
        .text
        .or(choice.message.and_then(|m| m.content))
        .ok_or_else(|| BackendError::Decode("response has no text".into()))?;

    let Some(lp) = choice.logprobs else {
        return Ok(Completion { text, tokens: None, top: None });
    };

    if let Some(content) = lp.content {
        let mut tokens = Vec::with_capacity(content.len());
        let mut top = Vec::with_capacity(content.len());
        for t in content {
            tokens.push(TokenLogprob { token: t.token, logprob: checked_logprob(t.logprob)? });
            top.push(t.top_logprobs.into_iter().map(|c| (c.token, c.logprob)).collect());
        }
        return Ok(Completion { text, tokens: Some(tokens), top: Some(top) });
    }

    let tokens = match (lp.tokens, lp.token_logprobs) {
        (Some(toks), Some(lps)) => {
            if toks.len() != lps.len() {
                return Err(BackendError::Decode(format!("{} tokens but {} logprobs", toks.len(), lps.len())));
            }
            let mut out = Vec::with_capacity(toks.len());
            for (token, lp) in toks.into_iter().zip(lps) {
                let lp = lp.ok_or_else(|| BackendError::Decode("null token logprob".into()))?;
                out.push(TokenLogprob { token, logprob: checked_logprob(lp)? });
            }
            Some(out)
        }
        _ => None,
    };
    let top = lp.top_logprobs.map(|positions| {
        positions.into_iter().map(|m| m.map(|m| m.into_iter().collect()).unwrap_or_default()).collect()
    });
    Ok(Completion { text, tokens, top })
}

#[derive(Deserialize)]
struct WireEmbeddingData {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    #[serde(default)]
    data: Option<Vec<WireEmbeddingData>>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    embeddings: Option<Vec<Vec<f64>>>,
}

/// Decodes an embeddings response: `data[0].embedding`, `embedding` or
/// `embeddings[0]`.
pub fn parse_embedding(body: &str) -> Result<Vec<f64>, BackendError> {
    let wire: WireEmbedding = serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    if let Some(data) = wire.data {
        return data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Decode("empty embedding data".into()));
    }
    if let Some(e) = wire.embedding {
        return Ok(e);
    }
    wire.embeddings
        .and_then(|v| v.into_iter().next())
        .ok_or_else(|| BackendError::Decode("response carries no embedding".into()))
}

struct Transport {
    agent: ureq::Agent,
    cfg: BackendConfig,
}

impl Transport {
    fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, cfg })
    }

    fn map_err(&self, e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Timeout(_) => BackendError::Timeout { timeout_ms: self.cfg.timeout_ms },
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                BackendError::Timeout { timeout_ms: self.cfg.timeout_ms }
            }
            other => BackendError::Transport(other.to_string()),
        }
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut req = self.agent.post(self.cfg.endpoint.as_str());
        if let Some(var) = &self.cfg.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| self.map_err(e))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text.chars().take(512).collect() });
        }
        Ok(text)
    }

    fn post(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Err(e) if e.is_retryable() && attempt < self.cfg.retries => {
                    attempt += 1;
                    log::warn!("{}: retrying after {e}", self.cfg.endpoint);
                }
                other => return other,
            }
        }
    }

    fn health(&self) -> Result<(), BackendError> {
        // any HTTP status means something is listening
        self.agent.get(self.cfg.endpoint.as_str()).call().map(|_| ()).map_err(|e| self.map_err(e))
    }
}

/// Generation backend speaking the OpenAI-compatible completions or chat API.
pub struct HttpBackend {
    transport: Transport,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { transport: Transport::new(cfg)? })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.transport.cfg
    }

    fn request_body(&self, prompt: &str, temperature: f64, max_tokens: u32, logprobs: bool) -> serde_json::Value {
        let cfg = &self.transport.cfg;
        match cfg.api {
            ApiStyle::Completions => {
                let mut body = json!({
                    "model": cfg.model,
                    "prompt": prompt,
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                    "stream": false,
                });
                if logprobs {
                    body["logprobs"] = json!(cfg.top_k);
                }
                body
            }
            ApiStyle::Chat => {
                let mut body = json!({
                    "model": cfg.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                    "stream": false,
                });
                if logprobs {
                    body["logprobs"] = json!(true);
                    body["top_logprobs"] = json!(cfg.top_k);
                }
                body
            }
        }
    }
}

impl Backend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.transport.cfg.model, self.transport.cfg.endpoint)
    }

    fn generate(&self, prompt: &str, temperature: f64) -> Result<Generation, BackendError> {
        let body = self.request_body(prompt, temperature, self.transport.cfg.max_tokens, true);
        let start = Instant::now();
        let raw = self.transport.post(&body)?;
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        let completion = parse_completion(&raw)?;
        let tokens = completion.tokens.ok_or(BackendError::LogprobsUnsupported)?;
        if tokens.is_empty() {
            return Err(BackendError::Decode("backend generated no tokens".into()));
        }
        Ok(Generation { text: completion.text, tokens, temperature, latency_ms })
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError> {
        let body = self.request_body(prompt, temperature, self.transport.cfg.max_tokens, false);
        let raw = self.transport.post(&body)?;
        Ok(parse_completion(&raw)?.text)
    }

    fn score_binary(&self, prompt: &str, option_a: &str, option_b: &str) -> Result<BinaryScore, BackendError> {
        let body = self.request_body(prompt, 0.0, 1, true);
        let raw = self.transport.post(&body)?;
        let completion = parse_completion(&raw)?;
        let mut candidates = completion.top.and_then(|t| t.into_iter().next()).unwrap_or_default();
        if let Some(first) = completion.tokens.as_ref().and_then(|t| t.first()) {
            candidates.push((first.token.clone(), first.logprob));
        }
        if candidates.is_empty() {
            return Err(BackendError::NoCandidates);
        }
        Ok(binary_from_candidates(&candidates, option_a, option_b))
    }

    fn health(&self) -> Result<(), BackendError> {
        self.transport.health()
    }
}

/// Embedding client; output is normalized client-side.
pub struct HttpEmbedder {
    transport: Transport,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: BackendConfig, dim: usize) -> Result<Self, BackendError> {
        if dim == 0 {
            return Err(BackendError::Config("embedding dimension must be > 0".into()));
        }
        Ok(Self { transport: Transport::new(cfg)?, dim })
    }
}

impl Embedder for HttpEmbedder {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.transport.cfg.model, self.transport.cfg.endpoint)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({ "model": self.transport.cfg.model, "input": text });
        let raw = self.transport.post(&body)?;
        normalize_embedding(parse_embedding(&raw)?, self.dim)
    }

    fn health(&self) -> Result<(), BackendError> {
        self.transport.health()
    }
}
