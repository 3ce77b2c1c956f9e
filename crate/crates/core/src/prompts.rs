//! Frozen prompt templates.
//!
//! These strings are part of the artifact's observable behaviour: changing a
//! byte changes every recorded signal. The GSA probe templates are rendered
//! by [`crate::signals::gsa_prompt`].

use crate::records::Query;

/// The confidence question asked by the self-assessment probe.
pub const CONFIDENCE_QUESTION: &str = "Are you confident you can answer this question correctly?";

/// Instruction that follows the confidence question.
pub const YES_NO_INSTRUCTION: &str = "Reply with exactly one word: YES or NO.";

/// Header of the retrieved-context block.
pub const KNOWLEDGE_HEADER: &str = "Relevant knowledge:";

pub const YES: &str = "YES";
pub const NO: &str = "NO";

/// `Question: ...` followed by one `X. text` line per option.
pub fn question_block(q: &Query) -> String {
    let mut s = format!("Question: {}\n", q.text.trim());
    for opt in &q.options {
        s.push_str(&format!("{}. {}\n", opt.letter, opt.text.trim()));
    }
    s
}

/// Prompt used for the local model's answer generation.
pub fn answer_prompt(q: &Query) -> String {
    let mut s = question_block(q);
    if q.is_mcq() {
        s.push_str("\nThink briefly, then finish with \"The answer is (X)\" where X is the letter of your choice.\n");
    } else {
        s.push_str("\nAnswer with a short phrase.\n");
    }
    s
}

/// Constrained prompt for the correctness judge.
pub fn judge_prompt(question: &str, response: &str, gold: &str) -> String {
    format!(
        "You are grading an answer.\n\nQuestion:\n{}\n\nReference answer: {}\n\nCandidate response:\n{}\n\n\
         Does the candidate response arrive at the reference answer? Reply with exactly one word: CORRECT or INCORRECT.\n",
        question.trim(),
        gold.trim(),
        response.trim()
    )
}
