//! Simulated users answering a clarifying question.
//!
//! One batched simulator call covers every user of a query. Replies that
//! abstain, are missing, or contain the user's gold answer become abstentions,
//! and an abstaining user is always scored incorrect downstream.

use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::error::{ForQuery, QueryError};
use crate::gateway::{Gateway, GatewayRequest, Message};
use crate::metrics::normalized_tokens;
use crate::prompts::{parse_user_sim_output, render_user_sim_prompt, SimSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    ModelAbstained,
    Leakage,
    ParseMissing,
}

/// Turn-3 reply of one simulated user. `value` is `None` exactly when the
/// user abstained, and then `abstain_reason` says why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarifyingAnswer {
    /// 0-based position in `QueryRecord::users`.
    pub user_index: usize,
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstain_reason: Option<AbstainReason>,
}

impl ClarifyingAnswer {
    pub fn answer(user_index: usize, value: impl Into<String>) -> Self {
        Self {
            user_index,
            value: Some(value.into()),
            abstain_reason: None,
        }
    }

    pub fn abstain(user_index: usize, reason: AbstainReason) -> Self {
        Self {
            user_index,
            value: None,
            abstain_reason: Some(reason),
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.value.is_none()
    }
}

/// Decoding settings for the simulator call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// True when any gold alias appears in `answer_text` as a whole-token run
/// after normalization.
pub fn leakage_check<S: AsRef<str>>(answer_text: &str, gold_aliases: &[S]) -> bool {
    let hay = normalized_tokens(answer_text);
    gold_aliases.iter().any(|alias| {
        let needle = normalized_tokens(alias.as_ref());
        !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
    })
}

/// Collect one clarifying answer per user of `query`, in user order.
pub fn simulate_answers(
    gateway: &Gateway,
    query: &QueryRecord,
    clarifying_question: &str,
    backend_id: &str,
    settings: SimSettings,
) -> Result<Vec<ClarifyingAnswer>, QueryError> {
    let expected: Vec<&str> = query.users.iter().map(|u| u.primary_answer()).collect();
    let prompt = render_user_sim_prompt(&query.question, clarifying_question, &expected).for_query(&query.id)?;
    let req = GatewayRequest::new(backend_id, vec![Message::user(prompt)])
        .temperature(settings.temperature)
        .max_tokens(settings.max_tokens);
    let raw = gateway.complete(&req).for_query(&query.id)?.text;
    let parsed = parse_user_sim_output(&raw, query.k()).for_query(&query.id)?;
    Ok(parsed
        .slots
        .into_iter()
        .zip(&query.users)
        .enumerate()
        .map(|(i, (slot, user))| match slot {
            SimSlot::Answer(a) if leakage_check(&a, &user.answers) => ClarifyingAnswer::abstain(i, AbstainReason::Leakage),
            SimSlot::Answer(a) => ClarifyingAnswer::answer(i, a),
            SimSlot::Abstain => ClarifyingAnswer::abstain(i, AbstainReason::ModelAbstained),
            SimSlot::Missing => ClarifyingAnswer::abstain(i, AbstainReason::ParseMissing),
        })
        .collect())
}
