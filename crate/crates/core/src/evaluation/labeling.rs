//! Correctness labeling.
//!
//! Multiple-choice responses go through a frozen, ordered list of letter
//! patterns; the first pattern that matches decides. A pattern that yields
//! two different letters counts as no extraction. Unextractable responses go
//! to the judge when one is configured and are excluded otherwise.
//!
//! Open answers are correct when a normalized gold alias is a substring of
//! the normalized response.

use std::sync::LazyLock;

use regex::Regex;

use super::EvalError;
use crate::backends::Judge;
use crate::records::LabelSource;

/// Letter-extraction patterns, tried in order.
pub const MCQ_PATTERNS: [&str; 3] = [
    // "the answer is (C)", "answer is: C", "answer is **C**"
    r"(?i:answer\s+is)\s*:?\s*\**\s*\(?([A-J])\b",
    // "Answer: B", "**Answer:** B"
    r"(?i:answer)\s*\**\s*:\s*\**\s*\(?([A-J])\b",
    // a final line holding only a letter: "C", "(C)", "C."
    r"\A(?:[\s\S]*\n)?[ \t]*\(?([A-J])[.)]?\s*\z",
];

static PATTERNS: LazyLock<Vec<Regex>> =
    LazyLock::new(|| MCQ_PATTERNS.iter().map(|p| Regex::new(p).expect("frozen pattern compiles")).collect());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extraction {
    Letter(char),
    /// The deciding pattern matched different letters.
    Ambiguous,
    None,
}

pub fn extract_letter(response: &str) -> Extraction {
    for re in PATTERNS.iter() {
        let mut letters = re.captures_iter(response).filter_map(|c| c.get(1)).filter_map(|m| m.as_str().chars().next());
        let Some(first) = letters.next() else {
            continue;
        };
        return if letters.all(|l| l == first) { Extraction::Letter(first) } else { Extraction::Ambiguous };
    }
    Extraction::None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelOutcome {
    Labeled {
        correct: bool,
        source: LabelSource,
    },
    /// Row left out of evaluation; never guessed.
    Excluded {
        reason: String,
    },
}

/// Labels a multiple-choice response. `question` and `gold_text` are only
/// shown to the judge.
pub fn label_mcq(
    response: &str,
    gold_letter: &str,
    question: &str,
    gold_text: &str,
    judge: Option<&dyn Judge>,
) -> LabelOutcome {
    let gold = gold_letter.trim();
    let reason = match extract_letter(response) {
        Extraction::Letter(l) => {
            return LabelOutcome::Labeled {
                correct: gold.len() == 1 && gold.starts_with(l),
                source: LabelSource::Regex,
            };
        }
        Extraction::Ambiguous => "conflicting answer letters",
        Extraction::None => "no answer letter found",
    };
    match judge {
        None => LabelOutcome::Excluded { reason: format!("{reason}; no judge configured") },
        Some(j) => match j.judge(question, response, gold_text) {
            Ok(correct) => LabelOutcome::Labeled { correct, source: LabelSource::Judge },
            Err(e) => LabelOutcome::Excluded { reason: format!("{reason}; judge: {e}") },
        },
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips punctuation, collapses whitespace and drops a leading
/// article.
pub fn normalize_answer(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c
            } else if c.is_whitespace() {
                ' '
            } else {
                '\0'
            }
        })
        .filter(|&c| c != '\0')
        .flat_map(char::to_lowercase)
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

/// Substring match of any normalized alias against the normalized response.
pub fn label_open(response: &str, gold_aliases: &[&str]) -> Result<bool, EvalError> {
    let aliases: Vec<String> = gold_aliases.iter().map(|a| normalize_answer(a)).filter(|a| !a.is_empty()).collect();
    if aliases.is_empty() {
        return Err(EvalError::EmptyAliases);
    }
    let resp = normalize_answer(response);
    Ok(aliases.iter().any(|a| resp.contains(a.as_str())))
}
