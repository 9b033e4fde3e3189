//! Prompt templates and parsers for the structured outputs they induce.
//!
//! Templates are versioned text assets under `templates/`. Rendering is a
//! single left-to-right pass: substituted values are copied verbatim and never
//! re-scanned, so answers that happen to contain `{question}` stay literal.

mod fewshot;
mod parse;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

pub use fewshot::{render_fewshot_qa, Exemplar, FewShotPool};
pub use parse::{
    parse_procot_decision, parse_sft_gen_output, parse_user_sim_output, SftGenOutput, SftGenPair, SftGenParse,
    SimSlot, UserSimParse,
};

/// Prefix identifying a clarifying question.
pub const CLARIFY_PREFIX: &str = "Clarifying Question:";

pub const SFT_GEN_TEMPLATE: &str = include_str!("../../templates/sft_gen.txt");
pub const USER_SIM_TEMPLATE: &str = include_str!("../../templates/user_sim.txt");
pub const ASSISTANT_TURN_TEMPLATE: &str = include_str!("../../templates/assistant_turn.txt");
pub const DIRECT_ANSWER_TEMPLATE: &str = include_str!("../../templates/direct_answer.txt");
pub const ANSWER_AFTER_CLARIFY_TEMPLATE: &str = include_str!("../../templates/answer_after_clarify.txt");
/// Authored in-repo; not taken from any published prompt.
pub const PROCOT_TEMPLATE: &str = include_str!("../../templates/procot.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("nothing to disambiguate: need at least 2 answers, got {0}")]
    NotEnoughAnswers(usize),
    #[error("expected answer list is empty")]
    NoExpectedAnswers,
    #[error("few-shot pool too small: need {needed}, have {available} after excluding the target")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("unparseable output ({reason}): {raw:?}")]
    Parse { reason: String, raw: String },
    #[error("no clarifying pair matched a candidate answer ({dropped} dropped)")]
    NoMatchedPairs { dropped: usize },
}

/// Substitute `{name}` placeholders in one pass.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (name, value) in values {
            let placeholder_len = name.len() + 2;
            if rest.len() >= placeholder_len
                && rest[1..].starts_with(name)
                && rest.as_bytes()[placeholder_len - 1] == b'}'
            {
                out.push_str(value);
                rest = &rest[placeholder_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

/// Remove a leading clarify prefix (after leading whitespace), if present.
pub fn strip_clarify_prefix(text: &str) -> &str {
    let t = text.trim_start();
    t.strip_prefix(CLARIFY_PREFIX).map(str::trim).unwrap_or(text.trim())
}

/// Ensure `text` carries the clarify prefix exactly once.
pub fn with_clarify_prefix(text: &str) -> String {
    format!("{CLARIFY_PREFIX} {}", strip_clarify_prefix(text))
}

pub fn render_sft_gen_prompt<S: AsRef<str>>(question: &str, answers: &[S]) -> Result<String, PromptError> {
    if answers.len() < 2 {
        return Err(PromptError::NotEnoughAnswers(answers.len()));
    }
    let listed = answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(fill(SFT_GEN_TEMPLATE, &[("question", question), ("answers", &listed)]))
}

/// `clarifying_question` may include or omit the clarify prefix.
pub fn render_user_sim_prompt<S: AsRef<str>>(
    question: &str,
    clarifying_question: &str,
    expected_answers: &[S],
) -> Result<String, PromptError> {
    if expected_answers.is_empty() {
        return Err(PromptError::NoExpectedAnswers);
    }
    let listed = expected_answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("Expected Answer {}: {}", i + 1, a.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(fill(
        USER_SIM_TEMPLATE,
        &[
            ("question", question),
            ("clarify_q", strip_clarify_prefix(clarifying_question)),
            ("answers", &listed),
        ],
    ))
}

/// Turn-2 prompt; also the serialized prompt `h` of preference records.
pub fn render_assistant_turn(question: &str) -> String {
    fill(ASSISTANT_TURN_TEMPLATE, &[("question", question)])
}

pub fn render_direct_answer(question: &str) -> String {
    fill(DIRECT_ANSWER_TEMPLATE, &[("question", question)])
}

/// Turn-4 prompt over `(x, q, a_i)`.
pub fn render_answer_after_clarify(question: &str, clarifying_question: &str, clarifying_answer: &str) -> String {
    fill(
        ANSWER_AFTER_CLARIFY_TEMPLATE,
        &[
            ("question", question),
            ("clarifying_question", strip_clarify_prefix(clarifying_question)),
            ("clarifying_answer", clarifying_answer),
        ],
    )
}

pub fn render_procot_prompt(question: &str) -> String {
    fill(PROCOT_TEMPLATE, &[("question", question)])
}

/// First non-empty line of a model answer, trimmed.
pub fn extract_answer(raw: &str) -> String {
    raw.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_owned()
}

/// Short content digests of every template, for run metadata.
pub fn template_versions() -> BTreeMap<&'static str, String> {
    [
        ("sft_gen", SFT_GEN_TEMPLATE),
        ("user_sim", USER_SIM_TEMPLATE),
        ("assistant_turn", ASSISTANT_TURN_TEMPLATE),
        ("direct_answer", DIRECT_ANSWER_TEMPLATE),
        ("answer_after_clarify", ANSWER_AFTER_CLARIFY_TEMPLATE),
        ("procot", PROCOT_TEMPLATE),
    ]
    .into_iter()
    .map(|(name, t)| (name, hex::encode(&Sha256::digest(t.as_bytes())[..8])))
    .collect()
}
