//! The four zero-shot confidence signals.
//!
//! * `logprob`: sigmoid of the scaled mean token log-probability.
//! * `gsa`: two-class softmax over the YES/NO first-token log-probabilities
//!   of a self-assessment probe, optionally conditioned on retrieved text.
//! * `sc`: Jaccard overlap of the word sets of two generations.
//! * `ks`: best cosine similarity between the query and the knowledge base.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, BinaryScore};
use crate::kb::{Hit, KbError, KnowledgeIndex};
use crate::prompts::{self, CONFIDENCE_QUESTION, KNOWLEDGE_HEADER, NO, YES, YES_NO_INSTRUCTION};
use crate::records::{Generation, Query};

/// Temperatures of the two self-consistency generations.
pub const SC_TEMPERATURES: (f64, f64) = (0.0, 0.7);

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("generation has no tokens")]
    EmptyGeneration,
    #[error("invalid signal configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Affine map applied to the mean log-probability before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogprobMapping {
    pub scale: f64,
    pub shift: f64,
}

impl Default for LogprobMapping {
    /// Centres the transition so a mean log-probability of -1.5 maps to 0.5.
    fn default() -> Self {
        Self { scale: 2.0, shift: 3.0 }
    }
}

impl LogprobMapping {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.scale > 0.0 && self.scale.is_finite() && self.shift.is_finite()) {
            return Err(SignalError::Config(format!(
                "logprob mapping needs a finite positive scale, got scale={} shift={}",
                self.scale, self.shift
            )));
        }
        Ok(())
    }

    pub fn apply(&self, mean_logprob: f64) -> f64 {
        sigmoid(self.scale * mean_logprob + self.shift)
    }
}

/// Logprob signal of a generation.
pub fn logprob_signal(gen: &Generation, mapping: &LogprobMapping) -> Result<f64, SignalError> {
    let mean = gen.mean_logprob().ok_or(SignalError::EmptyGeneration)?;
    Ok(mapping.apply(mean))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsaVariant {
    /// The bare probe.
    V2Bare,
    /// Injects retrieved text only when a hit clears `tau`.
    #[default]
    V3Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsaConfig {
    pub tau: f64,
    pub max_hits: usize,
    pub variant: GsaVariant,
}

impl Default for GsaConfig {
    fn default() -> Self {
        Self { tau: 0.70, max_hits: 5, variant: GsaVariant::V3Conditional }
    }
}

impl GsaConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(SignalError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.max_hits == 0 {
            return Err(SignalError::Config("max_hits must be >= 1".into()));
        }
        Ok(())
    }
}

fn bare_probe(q: &Query) -> String {
    format!("{}\n{CONFIDENCE_QUESTION} {YES_NO_INSTRUCTION}\nAnswer:", prompts::question_block(q))
}

/// Hits that clear the injection threshold, in the given order, capped at
/// `max_hits`.
pub fn strong_hits<'a, 'h>(hits: &'h [Hit<'a>], cfg: &GsaConfig) -> Vec<&'h Hit<'a>> {
    hits.iter().filter(|h| h.score >= cfg.tau).take(cfg.max_hits).collect()
}

/// Renders the self-assessment probe.
///
/// The bare form is the question block followed by the confidence question.
/// The conditional form prepends a numbered `Relevant knowledge:` list of the
/// strong hits' texts; with no strong hit it is byte-identical to the bare
/// form, so the model cannot tell an empty retrieval from no retrieval.
/// Retrieval scores are never shown.
pub fn gsa_prompt(q: &Query, hits: &[Hit<'_>], cfg: &GsaConfig) -> String {
    let bare = bare_probe(q);
    if cfg.variant == GsaVariant::V2Bare {
        return bare;
    }
    let strong = strong_hits(hits, cfg);
    if strong.is_empty() {
        return bare;
    }
    let mut s = format!("{KNOWLEDGE_HEADER}\n");
    for (i, hit) in strong.iter().enumerate() {
        let text = hit.entry.text.split_whitespace().collect::<Vec<_>>().join(" ");
        s.push_str(&format!("{}. {text}\n", i + 1));
    }
    s.push('\n');
    s.push_str(&bare);
    s
}

/// Self-assessment probability plus a marker for the degenerate case where
/// neither YES nor NO was among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsaScore {
    pub value: f64,
    pub double_floored: bool,
}

/// `P(YES) = e^a / (e^a + e^b)`, evaluated as a sigmoid of the difference.
pub fn gsa_probability(score: &BinaryScore) -> f64 {
    sigmoid(score.logprob_a - score.logprob_b)
}

/// Runs the probe and returns P(YES).
pub fn gsa_signal<B: Backend + ?Sized>(backend: &B, prompt: &str) -> Result<GsaScore, SignalError> {
    let score = backend.score_binary(prompt, YES, NO)?;
    let double_floored = score.both_floored();
    if double_floored {
        log::warn!("neither {YES} nor {NO} among first-position candidates; GSA defaults to 0.5");
    }
    Ok(GsaScore { value: gsa_probability(&score), double_floored })
}

/// Lowercased, punctuation-stripped, whitespace-split word set.
pub fn word_set(text: &str) -> BTreeSet<String> {
    let cleaned: String =
        text.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Jaccard overlap of two word sets; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Self-consistency between two generations of the same prompt.
pub fn self_consistency(a: &Generation, b: &Generation) -> f64 {
    jaccard(&word_set(&a.text), &word_set(&b.text))
}

/// Knowledge-similarity signal, clamped into [-1, 1] against rounding.
pub fn knowledge_signal(index: &KnowledgeIndex, query_vec: &[f64]) -> Result<f64, SignalError> {
    Ok(index.max_similarity(query_vec)?.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockBackend, MockBinary, MockConfig, MockScript};
    use crate::backends::LOGPROB_FLOOR;
    use crate::records::{KbEntry, McqOption, TokenLogprob};

    fn generation(text: &str, logprobs: &[f64]) -> Generation {
        Generation {
            text: text.into(),
            tokens: logprobs.iter().map(|&l| TokenLogprob { token: "t".into(), logprob: l }).collect(),
            temperature: 0.0,
            latency_ms: 0.0,
        }
    }

    fn query() -> Query {
        Query {
            id: "q1".into(),
            text: "Which planet is largest?".into(),
            options: vec![McqOption::new("A", "Mars"), McqOption::new("B", "Jupiter")],
            gold: None,
            dataset: "mmlu".into(),
            category: "astronomy".into(),
        }
    }

    fn kb_entry(id: &str, text: &str) -> KbEntry {
        KbEntry { id: id.into(), text: text.into(), embedding: vec![1.0] }
    }

    #[test]
    fn logprob_anchor_and_limits() {
        let m = LogprobMapping::default();
        assert_eq!(logprob_signal(&generation("x", &[-1.5, -1.5, -1.5]), &m).unwrap(), 0.5);
        let at_zero = logprob_signal(&generation("x", &[0.0]), &m).unwrap();
        assert!((at_zero - 0.952_574_126_822_433_4).abs() < 1e-12);
        assert!(matches!(logprob_signal(&generation("", &[]), &m), Err(SignalError::EmptyGeneration)));
    }

    #[test]
    fn mapping_rejects_non_positive_scale() {
        assert!(LogprobMapping { scale: 0.0, shift: 3.0 }.validate().is_err());
        assert!(LogprobMapping::default().validate().is_ok());
    }

    #[test]
    fn bare_probe_is_frozen() {
        let p = gsa_prompt(&query(), &[], &GsaConfig { variant: GsaVariant::V2Bare, ..GsaConfig::default() });
        assert_eq!(
            p,
            "Question: Which planet is largest?\nA. Mars\nB. Jupiter\n\n\
             Are you confident you can answer this question correctly? Reply with exactly one word: YES or NO.\nAnswer:"
        );
    }

    #[test]
    fn v3_falls_back_to_bare_bytes() {
        let e = kb_entry("k", "Jupiter is the largest planet.");
        let hits = [Hit { entry: &e, score: 0.69 }];
        let v2 = gsa_prompt(&query(), &hits, &GsaConfig { variant: GsaVariant::V2Bare, ..GsaConfig::default() });
        let v3 = gsa_prompt(&query(), &hits, &GsaConfig::default());
        assert_eq!(v2.as_bytes(), v3.as_bytes());
    }

    #[test]
    fn v3_injects_strong_hits_only() {
        let a = kb_entry("a", "Jupiter is the largest planet.");
        let b = kb_entry("b", "Mars is red.");
        let c = kb_entry("c", "Saturn has rings.");
        let hits = [Hit { entry: &a, score: 0.72 }, Hit { entry: &b, score: 0.69 }, Hit { entry: &c, score: 0.65 }];
        let v3 = gsa_prompt(&query(), &hits, &GsaConfig::default());
        let bare = gsa_prompt(&query(), &[], &GsaConfig::default());
        assert!(v3.starts_with("Relevant knowledge:\n1. Jupiter is the largest planet.\n\nQuestion:"));
        assert!(!v3.contains("Mars is red"));
        assert!(!v3.contains("0.72"));
        assert!(v3.ends_with(&bare));
        assert!(!bare.contains("Jupiter is the largest"));
    }

    #[test]
    fn gsa_probability_values() {
        let eq = BinaryScore { logprob_a: -0.8, logprob_b: -0.8, floored: false };
        assert_eq!(gsa_probability(&eq), 0.5);
        let s = BinaryScore { logprob_a: -1.0, logprob_b: -2.0, floored: false };
        // oracle: direct two-class softmax
        let direct = (-1.0f64).exp() / ((-1.0f64).exp() + (-2.0f64).exp());
        assert!((gsa_probability(&s) - direct).abs() < 1e-12);
        assert!((gsa_probability(&s) - 0.731_058_578_630_004_9).abs() < 1e-12);
        let floored = BinaryScore { logprob_a: -1.0, logprob_b: LOGPROB_FLOOR, floored: true };
        assert!((gsa_probability(&floored) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gsa_signal_through_mock() {
        let backend = MockBackend::new(MockConfig {
            scripts: vec![MockScript {
                contains: "Answer:".into(),
                answer: None,
                token_logprob: None,
                binary: Some(MockBinary { yes: None, no: None, empty: false }),
            }],
            ..MockConfig::default()
        });
        let s = gsa_signal(&backend, "...Answer:").unwrap();
        assert_eq!(s.value, 0.5);
        assert!(s.double_floored);
    }

    #[test]
    fn jaccard_cases() {
        let g = |t: &str| generation(t, &[-0.1]);
        assert_eq!(self_consistency(&g("The answer is C."), &g("the answer, is c")), 1.0);
        assert_eq!(self_consistency(&g("alpha beta"), &g("gamma delta")), 0.0);
        assert!((self_consistency(&g("a b"), &g("b c")) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(self_consistency(&g("..."), &g("")), 1.0);
    }
}
