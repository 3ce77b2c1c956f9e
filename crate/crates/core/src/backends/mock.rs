//! Deterministic in-process backends.
//!
//! Every output is a pure function of the configured seed and the call's
//! inputs (prompt, temperature, texts), so pipelines over the mocks are
//! bit-reproducible. Reported latencies are simulated from the same inputs
//! plus the injected delay; the delay is also slept for real.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    binary_from_candidates, normalize_embedding, parse_verdict, Backend, BackendError, BinaryScore, Embedder, Judge,
};
use crate::records::{Generation, TokenLogprob};

/// Simulated cost per generated token.
const MS_PER_TOKEN: f64 = 25.0;
/// Simulated cost of a one-token scoring call.
const MS_PER_SCORE: f64 = 120.0;
/// Simulated cost of an embedding call.
const MS_PER_EMBED: f64 = 8.0;

fn hashed_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Fixed binary-scoring behaviour for prompts matching a script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBinary {
    /// Logprob of the first option; `None` leaves it out of the candidates.
    #[serde(default)]
    pub yes: Option<f64>,
    #[serde(default)]
    pub no: Option<f64>,
    /// Report no candidates at all.
    #[serde(default)]
    pub empty: bool,
}

/// Overrides the generated behaviour for prompts containing `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub contains: String,
    #[serde(default)]
    pub answer: Option<String>,
    /// Logprob given to every token of the scripted answer.
    #[serde(default)]
    pub token_logprob: Option<f64>,
    #[serde(default)]
    pub binary: Option<MockBinary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay_ms: u64,
    /// Calls whose delay exceeds this fail with a timeout.
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    /// When false, `generate` fails as a backend without logprob support would.
    #[serde(default = "yes")]
    pub logprobs: bool,
    #[serde(default)]
    pub scripts: Vec<MockScript>,
}

fn yes() -> bool {
    true
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { seed: 0, delay_ms: 0, timeout_ms: None, logprobs: true, scripts: Vec::new() }
    }
}

#[derive(Debug, Default)]
struct Counters {
    generate: AtomicUsize,
    complete: AtomicUsize,
    score: AtomicUsize,
}

#[derive(Debug)]
pub struct MockBackend {
    cfg: MockConfig,
    calls: Counters,
}

const FILLER: &[&str] = &[
    "well",
    "likely",
    "consider",
    "because",
    "then",
    "which",
    "means",
    "so",
    "perhaps",
    "option",
    "given",
    "therefore",
    "clearly",
    "seems",
    "probably",
];

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Self {
        Self { cfg, calls: Counters::default() }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(MockConfig { seed, ..MockConfig::default() })
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }

    pub fn generate_calls(&self) -> usize {
        self.calls.generate.load(Ordering::SeqCst)
    }

    pub fn complete_calls(&self) -> usize {
        self.calls.complete.load(Ordering::SeqCst)
    }

    pub fn score_calls(&self) -> usize {
        self.calls.score.load(Ordering::SeqCst)
    }

    fn script_for(&self, prompt: &str) -> Option<&MockScript> {
        self.cfg.scripts.iter().find(|s| prompt.contains(&s.contains))
    }

    fn wait(&self) -> Result<(), BackendError> {
        if let Some(limit) = self.cfg.timeout_ms {
            if self.cfg.delay_ms > limit {
                std::thread::sleep(Duration::from_millis(limit));
                return Err(BackendError::Timeout { timeout_ms: limit });
            }
        }
        if self.cfg.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.cfg.delay_ms));
        }
        Ok(())
    }

    /// Letters of `X. text` option lines found in the prompt.
    fn option_letters(prompt: &str) -> Vec<char> {
        prompt
            .lines()
            .filter_map(|l| {
                let mut chars = l.chars();
                let c = chars.next()?;
                (c.is_ascii_uppercase() && chars.next() == Some('.')).then_some(c)
            })
            .collect()
    }

    fn base_answer(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let letters = Self::option_letters(prompt);
        if !letters.is_empty() {
            let letter = letters[rng.gen_range(0..letters.len())];
            let style: f64 = rng.gen();
            let n_filler = rng.gen_range(2..7);
            let filler: Vec<&str> = (0..n_filler).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect();
            return if style < 0.55 {
                format!("{}, so the answer is ({letter}).", capitalize(&filler.join(" ")))
            } else if style < 0.7 {
                format!("{}.\nAnswer: {letter}", capitalize(&filler.join(" ")))
            } else {
                format!(
                    "{} {} without a single clear choice.",
                    capitalize(&filler.join(" ")),
                    FILLER[rng.gen_range(0..FILLER.len())]
                )
            };
        }
        let words: Vec<&str> =
            prompt.split_whitespace().filter(|w| w.chars().next().is_some_and(char::is_uppercase)).collect();
        let pick = if words.is_empty() {
            FILLER[rng.gen_range(0..FILLER.len())].to_string()
        } else {
            words[rng.gen_range(0..words.len())].trim_matches(|c: char| !c.is_alphanumeric()).to_string()
        };
        format!("I believe it is {pick}.")
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Splits text into tokens that concatenate back to it, each word carrying
/// its leading whitespace.
fn tokenize(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev_space = false;
    for c in text.chars() {
        let is_space = c.is_whitespace();
        if is_space && !prev_space && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(c);
        prev_space = is_space;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl Backend for MockBackend {
    fn identity(&self) -> String {
        format!("mock:seed={}", self.cfg.seed)
    }

    fn generate(&self, prompt: &str, temperature: f64) -> Result<Generation, BackendError> {
        self.calls.generate.fetch_add(1, Ordering::SeqCst);
        self.wait()?;
        if !self.cfg.logprobs {
            return Err(BackendError::LogprobsUnsupported);
        }
        let mut rng = hashed_rng(self.cfg.seed, &[b"generate", prompt.as_bytes()]);
        let script = self.script_for(prompt);
        let base = match script.and_then(|s| s.answer.clone()) {
            Some(a) => a,
            None => self.base_answer(prompt, &mut rng),
        };
        // a per-prompt confidence level shared by every token
        let confidence: f64 = rng.gen();
        let text = if temperature > 0.0 && script.and_then(|s| s.answer.as_ref()).is_none() {
            let mut trng =
                hashed_rng(self.cfg.seed, &[b"temperature", prompt.as_bytes(), &temperature.to_bits().to_le_bytes()]);
            let swap_p = (temperature.min(1.0) * 0.5) * (1.0 - confidence);
            tokenize(&base)
                .into_iter()
                .map(|tok| {
                    if trng.gen::<f64>() < swap_p {
                        let lead: String = tok.chars().take_while(|c| c.is_whitespace()).collect();
                        format!("{lead}{}", FILLER[trng.gen_range(0..FILLER.len())])
                    } else {
                        tok
                    }
                })
                .collect()
        } else {
            base
        };
        let mut lrng = hashed_rng(self.cfg.seed, &[b"logprobs", prompt.as_bytes(), text.as_bytes()]);
        let tokens: Vec<TokenLogprob> = tokenize(&text)
            .into_iter()
            .map(|token| {
                let logprob = match script.and_then(|s| s.token_logprob) {
                    Some(lp) => lp.min(0.0),
                    None => {
                        let jitter: f64 = lrng.gen_range(0.5..1.5);
                        -(0.02 + 3.5 * (1.0 - confidence)) * jitter
                    }
                };
                TokenLogprob { token, logprob }
            })
            .collect();
        if tokens.is_empty() {
            return Err(BackendError::Decode("backend generated no tokens".into()));
        }
        let latency_ms = self.cfg.delay_ms as f64 + MS_PER_TOKEN * tokens.len() as f64;
        Ok(Generation { text, tokens, temperature, latency_ms })
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError> {
        self.calls.complete.fetch_add(1, Ordering::SeqCst);
        self.wait()?;
        let mut rng =
            hashed_rng(self.cfg.seed, &[b"complete", prompt.as_bytes(), &temperature.to_bits().to_le_bytes()]);
        Ok(match self.script_for(prompt).and_then(|s| s.answer.clone()) {
            Some(a) => a,
            None => self.base_answer(prompt, &mut rng),
        })
    }

    fn score_binary(&self, prompt: &str, option_a: &str, option_b: &str) -> Result<BinaryScore, BackendError> {
        self.calls.score.fetch_add(1, Ordering::SeqCst);
        self.wait()?;
        let candidates: Vec<(String, f64)> = match self.script_for(prompt).and_then(|s| s.binary.as_ref()) {
            Some(b) if b.empty => return Err(BackendError::NoCandidates),
            Some(b) => {
                let mut c = vec![("I".to_string(), -4.0)];
                if let Some(y) = b.yes {
                    c.push((option_a.to_string(), y));
                }
                if let Some(n) = b.no {
                    c.push((option_b.to_string(), n));
                }
                c
            }
            None => {
                let mut rng = hashed_rng(self.cfg.seed, &[b"binary", prompt.as_bytes()]);
                let a: f64 = -rng.gen_range(0.01..4.0);
                let b: f64 = -rng.gen_range(0.01..4.0);
                vec![(option_a.to_string(), a), (option_b.to_string(), b)]
            }
        };
        Ok(binary_from_candidates(&candidates, option_a, option_b))
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn simulated_score_ms(&self) -> Option<f64> {
        Some(self.cfg.delay_ms as f64 + MS_PER_SCORE)
    }

    fn simulated_complete_ms(&self, text: &str) -> Option<f64> {
        Some(self.cfg.delay_ms as f64 + MS_PER_TOKEN * tokenize(text).len() as f64)
    }
}

/// Bag-of-words hashing embedder: each lowercased word maps to a fixed
/// pseudo-random direction; a text embeds as the normalized sum. Texts that
/// share words land close together.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
    delay_ms: u64,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim, delay_ms: 0 }
    }

    pub fn with_delay(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }

    fn word_vector(&self, word: &str, acc: &mut [f64]) {
        let mut rng = hashed_rng(self.seed, &[b"embed", word.as_bytes()]);
        for x in acc.iter_mut() {
            *x += rng.gen_range(-1.0..1.0);
        }
    }
}

impl Embedder for MockEmbedder {
    fn identity(&self) -> String {
        format!("mock-embed:seed={},dim={}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        let mut acc = vec![0.0; self.dim];
        let mut words = 0;
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.word_vector(&word.to_lowercase(), &mut acc);
            words += 1;
        }
        if words == 0 {
            self.word_vector("", &mut acc);
        }
        normalize_embedding(acc, self.dim)
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn simulated_embed_ms(&self) -> Option<f64> {
        Some(self.delay_ms as f64 + MS_PER_EMBED)
    }
}

/// Judge returning a fixed reply, or a seeded verdict when no reply is set.
#[derive(Debug, Clone)]
pub struct MockJudge {
    reply: Option<String>,
    seed: u64,
}

impl MockJudge {
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self { reply: Some(reply.into()), seed: 0 }
    }

    pub fn seeded(seed: u64) -> Self {
        Self { reply: None, seed }
    }
}

impl Judge for MockJudge {
    fn judge(&self, question: &str, response: &str, gold: &str) -> Result<bool, BackendError> {
        match &self.reply {
            Some(r) => parse_verdict(r),
            None => {
                let mut rng =
                    hashed_rng(self.seed, &[b"judge", question.as_bytes(), response.as_bytes(), gold.as_bytes()]);
                // mentioning the gold letter helps, as it would for a real judge
                let mentions = response.split(|c: char| !c.is_alphanumeric()).any(|w| w == gold);
                let p = if mentions { 0.8 } else { 0.25 };
                Ok(rng.gen::<f64>() < p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::l2_norm;
    use std::time::Instant;

    #[test]
    fn generation_is_deterministic() {
        let m = MockBackend::with_seed(3);
        let p = "Question: What is 2+2?\nA. 3\nB. 4\nC. 5\n";
        let a = m.generate(p, 0.0).unwrap();
        let b = m.generate(p, 0.0).unwrap();
        assert_eq!(a, b);
        let other = MockBackend::with_seed(3).generate(p, 0.0).unwrap();
        assert_eq!(a, other);
        assert_eq!(m.generate_calls(), 2);
    }

    #[test]
    fn tokens_concatenate_to_text() {
        let m = MockBackend::with_seed(9);
        for t in [0.0, 0.7] {
            let g = m.generate("Who wrote Hamlet? Name the Playwright.", t).unwrap();
            let joined: String = g.tokens.iter().map(|t| t.token.as_str()).collect();
            assert_eq!(joined, g.text);
            assert!(g.tokens.iter().all(|t| t.logprob <= 0.0));
        }
    }

    #[test]
    fn missing_logprob_support_is_distinct() {
        let m = MockBackend::new(MockConfig { logprobs: false, ..MockConfig::default() });
        assert!(matches!(m.generate("x", 0.0), Err(BackendError::LogprobsUnsupported)));
    }

    #[test]
    fn timeout_yields_no_generation() {
        let m = MockBackend::new(MockConfig { delay_ms: 30, timeout_ms: Some(5), ..MockConfig::default() });
        assert!(matches!(m.generate("x", 0.0), Err(BackendError::Timeout { timeout_ms: 5 })));
    }

    #[test]
    fn latency_grows_with_delay() {
        let p = "Question: Capital of Peru?";
        let fast = MockBackend::new(MockConfig { delay_ms: 0, ..MockConfig::default() });
        let slow = MockBackend::new(MockConfig { delay_ms: 20, ..MockConfig::default() });
        let t0 = Instant::now();
        let a = fast.generate(p, 0.0).unwrap();
        let fast_wall = t0.elapsed();
        let t1 = Instant::now();
        let b = slow.generate(p, 0.0).unwrap();
        let slow_wall = t1.elapsed();
        assert!(a.latency_ms >= 0.0);
        assert!(b.latency_ms > a.latency_ms);
        assert!(slow_wall >= Duration::from_millis(20));
        assert!(slow_wall > fast_wall);
    }

    #[test]
    fn scripted_binary_scores() {
        let script =
            |binary| MockScript { contains: "probe".into(), answer: None, token_logprob: None, binary: Some(binary) };
        let m = MockBackend::new(MockConfig {
            scripts: vec![script(MockBinary { yes: Some(-1.0), no: Some(-2.0), empty: false })],
            ..MockConfig::default()
        });
        assert_eq!(
            m.score_binary("probe", "YES", "NO").unwrap(),
            BinaryScore { logprob_a: -1.0, logprob_b: -2.0, floored: false }
        );

        let m = MockBackend::new(MockConfig {
            scripts: vec![script(MockBinary { yes: Some(-1.0), no: None, empty: false })],
            ..MockConfig::default()
        });
        assert_eq!(
            m.score_binary("probe", "YES", "NO").unwrap(),
            BinaryScore { logprob_a: -1.0, logprob_b: super::super::LOGPROB_FLOOR, floored: true }
        );

        let m = MockBackend::new(MockConfig {
            scripts: vec![script(MockBinary { yes: None, no: None, empty: false })],
            ..MockConfig::default()
        });
        assert!(m.score_binary("probe", "YES", "NO").unwrap().both_floored());

        let m = MockBackend::new(MockConfig {
            scripts: vec![script(MockBinary { yes: None, no: None, empty: true })],
            ..MockConfig::default()
        });
        assert!(matches!(m.score_binary("probe", "YES", "NO"), Err(BackendError::NoCandidates)));
    }

    #[test]
    fn embeddings_are_unit_and_pure() {
        let e = MockEmbedder::new(1, 64);
        let a = e.embed("The Eiffel Tower is in Paris").unwrap();
        let b = e.embed("The Eiffel Tower is in Paris").unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a) - 1.0).abs() <= 1e-6);
        assert!((l2_norm(&e.embed("").unwrap()) - 1.0).abs() <= 1e-6);
        let near = e.embed("Eiffel Tower Paris").unwrap();
        let far = e.embed("photosynthesis chlorophyll leaves").unwrap();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        assert!(dot(&a, &near) > dot(&a, &far));
    }

    #[test]
    fn mock_judge_passthrough_and_failure() {
        assert!(MockJudge::fixed("CORRECT").judge("q", "r", "C").unwrap());
        assert!(!MockJudge::fixed("INCORRECT").judge("q", "r", "C").unwrap());
        assert!(matches!(MockJudge::fixed("MAYBE").judge("q", "r", "C"), Err(BackendError::Unlabeled(_))));
        let j = MockJudge::seeded(5);
        assert_eq!(j.judge("q", "r", "C").unwrap(), j.judge("q", "r", "C").unwrap());
    }
}
