//! Client contracts for the local model, the cloud model, the judge and the
//! embedding service.
//!
//! Concrete transports live in [`http`] (OpenAI-compatible JSON over HTTP)
//! and [`mock`] (a deterministic in-process stand-in used by tests and
//! offline pipelines). Callers hold trait objects and never see which one
//! they talk to.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::prompts;
use crate::records::Generation;

pub use http::{HttpBackend, HttpEmbedder};
pub use mock::{MockBackend, MockEmbedder, MockJudge};

/// Log-probability assigned to an option token missing from the reported
/// candidate list.
pub const LOGPROB_FLOOR: f64 = -100.0;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("backend did not return per-token log-probabilities; the logprob signal is unavailable")]
    LogprobsUnsupported,
    #[error("backend reported no candidate log-probabilities at the first position")]
    NoCandidates,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode backend response: {0}")]
    Decode(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unparseable judge verdict {0:?}; row left unlabeled")]
    Unlabeled(String),
    #[error("{0} unavailable")]
    Unavailable(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Timeouts and transport failures are worth one more attempt; protocol
    /// violations are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Timeout { .. } | BackendError::Transport(_))
            || matches!(self, BackendError::Http { status, .. } if *status >= 500)
    }
}

/// Request shape spoken by an HTTP backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `{"prompt": ..., "logprobs": k}` with `choices[0].text`.
    #[default]
    Completions,
    /// `{"messages": [...], "logprobs": true, "top_logprobs": k}`.
    Chat,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_tokens() -> u32 {
    256
}

fn default_top_k() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Full URL the request is POSTed to.
    pub endpoint: Url,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Number of candidate tokens requested per position.
    #[serde(default = "default_top_k")]
    pub top_k: u32,
    /// Extra attempts after a retryable failure.
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub api: ApiStyle,
}

impl BackendConfig {
    pub fn new(endpoint: Url, model: impl Into<String>) -> Self {
        Self {
            endpoint,
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            api_key_env: None,
            max_tokens: default_max_tokens(),
            top_k: default_top_k(),
            retries: 0,
            api: ApiStyle::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be > 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be > 0".into()));
        }
        if self.top_k == 0 {
            return Err(BackendError::Config("top_k must be > 0".into()));
        }
        if !matches!(self.endpoint.scheme(), "http" | "https") {
            return Err(BackendError::Config(format!("endpoint scheme `{}` is not http(s)", self.endpoint.scheme())));
        }
        Ok(())
    }
}

/// First-position log-probabilities of two option tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub logprob_a: f64,
    pub logprob_b: f64,
    /// Set when at least one option was absent from the candidates.
    pub floored: bool,
}

impl BinaryScore {
    pub fn both_floored(&self) -> bool {
        self.floored && self.logprob_a == LOGPROB_FLOOR && self.logprob_b == LOGPROB_FLOOR
    }
}

fn option_matches(candidate: &str, option: &str) -> bool {
    candidate.trim_start().eq_ignore_ascii_case(option.trim_start())
}

/// Reads two option tokens out of a first-position candidate list.
///
/// Matching ignores ASCII case and leading whitespace, so `" Yes"` counts for
/// `"YES"`. When several candidates match one option the most probable wins.
/// Absent options get [`LOGPROB_FLOOR`].
pub fn binary_from_candidates(candidates: &[(String, f64)], option_a: &str, option_b: &str) -> BinaryScore {
    let best = |option: &str| {
        candidates
            .iter()
            .filter(|(tok, lp)| option_matches(tok, option) && lp.is_finite())
            .map(|&(_, lp)| lp.min(0.0))
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    let a = best(option_a);
    let b = best(option_b);
    BinaryScore {
        logprob_a: a.unwrap_or(LOGPROB_FLOOR),
        logprob_b: b.unwrap_or(LOGPROB_FLOOR),
        floored: a.is_none() || b.is_none(),
    }
}

/// A text-generation backend.
pub trait Backend: Send + Sync {
    /// Short identity for manifests and logs.
    fn identity(&self) -> String;

    /// Generates an answer with per-token log-probabilities.
    fn generate(&self, prompt: &str, temperature: f64) -> Result<Generation, BackendError>;

    /// Generates an answer when only the text matters (cloud escalation,
    /// judging). Backends without log-probabilities override this.
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError> {
        self.generate(prompt, temperature).map(|g| g.text)
    }

    /// First-position log-probabilities of two single-token options.
    fn score_binary(&self, prompt: &str, option_a: &str, option_b: &str) -> Result<BinaryScore, BackendError>;

    fn health(&self) -> Result<(), BackendError>;

    /// Latency to record for a scoring call instead of wall-clock time. Only
    /// simulated backends return `Some`, which keeps their runs reproducible.
    fn simulated_score_ms(&self) -> Option<f64> {
        None
    }

    /// Simulated latency of a [`Backend::complete`] call that returned `text`.
    fn simulated_complete_ms(&self, _text: &str) -> Option<f64> {
        None
    }
}

pub trait Embedder: Send + Sync {
    fn identity(&self) -> String;

    /// Configured output dimension.
    fn dim(&self) -> usize;

    /// Returns an L2-normalized embedding of length [`Embedder::dim`].
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;

    fn health(&self) -> Result<(), BackendError>;

    /// See [`Backend::simulated_score_ms`].
    fn simulated_embed_ms(&self) -> Option<f64> {
        None
    }
}

/// Normalizes a raw embedding and checks its dimension.
pub fn normalize_embedding(mut raw: Vec<f64>, expected_dim: usize) -> Result<Vec<f64>, BackendError> {
    if raw.len() != expected_dim {
        return Err(BackendError::Dimension { expected: expected_dim, got: raw.len() });
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(BackendError::Decode("embedding contains non-finite values".into()));
    }
    let norm = crate::records::l2_norm(&raw);
    if norm == 0.0 {
        return Err(BackendError::Decode("embedding is the zero vector".into()));
    }
    for x in &mut raw {
        *x /= norm;
    }
    Ok(raw)
}

/// Correctness judge used when pattern-based labeling fails.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, response: &str, gold: &str) -> Result<bool, BackendError>;
}

/// Parses a judge reply. Only a leading `CORRECT` or `INCORRECT` (any case,
/// optional trailing punctuation) is accepted.
pub fn parse_verdict(reply: &str) -> Result<bool, BackendError> {
    let word: String =
        reply.split_whitespace().next().unwrap_or("").trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_uppercase();
    match word.as_str() {
        "CORRECT" => Ok(true),
        "INCORRECT" => Ok(false),
        _ => Err(BackendError::Unlabeled(reply.chars().take(80).collect())),
    }
}

/// Judge backed by any text-generation backend and a constrained prompt.
pub struct LlmJudge<B> {
    backend: B,
}

impl<B: Backend> LlmJudge<B> {
    pub fn new(backend: B) -> Self {
        Self { backend }
    }
}

impl<B: Backend> Judge for LlmJudge<B> {
    fn judge(&self, question: &str, response: &str, gold: &str) -> Result<bool, BackendError> {
        let prompt = prompts::judge_prompt(question, response, gold);
        let reply = self.backend.complete(&prompt, 0.0)?;
        parse_verdict(&reply)
    }
}

impl<T: Backend + ?Sized> Backend for std::sync::Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn generate(&self, prompt: &str, temperature: f64) -> Result<Generation, BackendError> {
        (**self).generate(prompt, temperature)
    }
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError> {
        (**self).complete(prompt, temperature)
    }
    fn score_binary(&self, prompt: &str, a: &str, b: &str) -> Result<BinaryScore, BackendError> {
        (**self).score_binary(prompt, a, b)
    }
    fn health(&self) -> Result<(), BackendError> {
        (**self).health()
    }
    fn simulated_score_ms(&self) -> Option<f64> {
        (**self).simulated_score_ms()
    }
    fn simulated_complete_ms(&self, text: &str) -> Option<f64> {
        (**self).simulated_complete_ms(text)
    }
}
