//! The two-branch interaction protocol.
//!
//! Turn 1 is the user's question. Turn 2 is the assistant's initial response;
//! if it is a clarifying question every simulated user replies (turn 3) and the
//! answerer produces one final answer per user (turn 4). Otherwise the turn-2
//! response, or a set of sampled answers, is the answer set.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::error::{ForQuery, QueryError};
use crate::gateway::{Gateway, GatewayRequest, Message};
use crate::metrics::normalize_answer;
use crate::prompts::{
    extract_answer, render_answer_after_clarify, render_assistant_turn, render_direct_answer, with_clarify_prefix,
    CLARIFY_PREFIX,
};
use crate::user_sim::{simulate_answers, ClarifyingAnswer, SimSettings};

/// A clarify-or-answer choice, e.g. from an external decider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Clarify,
    Direct,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Auto,
    ForceClarify,
    ForceDirect,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Mode::Auto),
            "force-clarify" | "force_clarify" => Ok(Mode::ForceClarify),
            "force-direct" | "force_direct" => Ok(Mode::ForceDirect),
            other => Err(format!("unknown mode {other:?} (expected auto, force-clarify, force-direct)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Auto => "auto",
            Mode::ForceClarify => "force-clarify",
            Mode::ForceDirect => "force-direct",
        })
    }
}

/// How the single-turn answer set is produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DirectStrategy {
    #[default]
    Greedy,
    /// Draw `n_samples` at T=1.0 and keep the `k` most frequent answers.
    Sampled { n_samples: u32 },
}

/// φ: a response is a clarifying question iff it starts with the prefix.
pub fn detect_clarify(response: &str) -> bool {
    response.trim_start().starts_with(CLARIFY_PREFIX)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTurn {
    pub user_index: usize,
    pub clarifying_answer: ClarifyingAnswer,
    /// `r_next^i`; absent for abstaining users.
    pub final_answer: Option<String>,
}

/// One complete interaction trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub query_id: String,
    pub question: String,
    pub mode: Mode,
    /// Forced choice from an external decider, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<Decision>,
    pub initial_response: String,
    pub is_clarify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user: Option<Vec<UserTurn>>,
    pub model_turns: u8,
}

impl Episode {
    pub fn decision(&self) -> Decision {
        if self.is_clarify {
            Decision::Clarify
        } else {
            Decision::Direct
        }
    }

    /// Check the structural invariants against the query's `k`.
    pub fn check(&self, k: usize) -> Result<(), String> {
        match (self.is_clarify, &self.per_user, &self.direct_answers) {
            (true, Some(users), None) if users.len() == k && self.model_turns == 2 => {
                if users.iter().enumerate().all(|(i, u)| u.user_index == i) {
                    Ok(())
                } else {
                    Err("per_user is not ordered by user_index".into())
                }
            }
            (false, None, Some(r)) if !r.is_empty() && r.len() <= k && self.model_turns == 1 => Ok(()),
            _ => Err(format!("episode {} violates the clarify/direct shape", self.query_id)),
        }
    }
}

/// Backends and decoding settings for a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub assistant: String,
    pub answerer: String,
    pub simulator: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub direct: DirectStrategy,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub final_temperature: f64,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    256
}

impl EngineConfig {
    pub fn new(assistant: impl Into<String>, answerer: impl Into<String>, simulator: impl Into<String>) -> Self {
        Self {
            assistant: assistant.into(),
            answerer: answerer.into(),
            simulator: simulator.into(),
            mode: Mode::Auto,
            direct: DirectStrategy::Greedy,
            max_tokens: default_max_tokens(),
            final_temperature: 0.0,
            sim: SimSettings::default(),
            seed: None,
        }
    }

    fn request(&self, backend: &str, messages: Vec<Message>) -> GatewayRequest {
        GatewayRequest::new(backend, messages).max_tokens(self.max_tokens).seed(self.seed)
    }
}

/// Turn 2 with the clarify prefix prefilled as the start of the assistant turn.
pub fn forced_clarify(gateway: &Gateway, cfg: &EngineConfig, backend: &str, question: &str, temperature: f64, sample_index: u32) -> Result<String, crate::gateway::GatewayError> {
    let req = cfg
        .request(
            backend,
            vec![Message::user(render_assistant_turn(question)), Message::assistant(CLARIFY_PREFIX)],
        )
        .temperature(temperature)
        .sample_index(sample_index);
    Ok(with_clarify_prefix(&gateway.complete(&req)?.text))
}

/// Greedy answer to the direct-answer prompt.
pub fn greedy_direct_answer(gateway: &Gateway, cfg: &EngineConfig, backend: &str, question: &str) -> Result<String, crate::gateway::GatewayError> {
    let req = cfg.request(backend, vec![Message::user(render_direct_answer(question))]);
    Ok(extract_answer(&gateway.complete(&req)?.text))
}

/// Turns 3 and 4 for every user of `query`, in user order.
pub fn rollout_clarify(
    gateway: &Gateway,
    cfg: &EngineConfig,
    query: &QueryRecord,
    clarifying_question: &str,
) -> Result<Vec<UserTurn>, QueryError> {
    let replies = simulate_answers(gateway, query, clarifying_question, &cfg.simulator, cfg.sim)?;
    replies
        .into_par_iter()
        .map(|reply| {
            let final_answer = match &reply.value {
                None => None,
                Some(a) => {
                    let prompt = render_answer_after_clarify(&query.question, clarifying_question, a);
                    let req = cfg
                        .request(&cfg.answerer, vec![Message::user(prompt)])
                        .temperature(cfg.final_temperature);
                    Some(extract_answer(&gateway.complete(&req).for_query(&query.id)?.text))
                }
            };
            Ok(UserTurn {
                user_index: reply.user_index,
                clarifying_answer: reply,
                final_answer,
            })
        })
        .collect()
}

/// The `k` most frequent answers by normalized form, most frequent first.
/// Ties keep first-seen order; each group is represented by its first surface form.
pub fn top_k_by_frequency(samples: &[String], k: usize) -> Vec<String> {
    let mut groups: Vec<(String, usize, usize)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = normalize_answer(s);
        match index.get(&key) {
            Some(&g) => groups[g].1 += 1,
            None => {
                index.insert(key, groups.len());
                groups.push((s.clone(), 1, i));
            }
        }
    }
    groups.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    groups.into_iter().take(k).map(|g| g.0).collect()
}

/// Draw `n_samples` direct answers at T=1.0 and keep the `k` most frequent.
pub fn sample_direct_answers(
    gateway: &Gateway,
    cfg: &EngineConfig,
    backend: &str,
    question: &str,
    k: usize,
    n_samples: u32,
) -> Result<Vec<String>, crate::gateway::GatewayError> {
    let prompt = render_direct_answer(question);
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let req = cfg
                .request(backend, vec![Message::user(prompt.clone())])
                .temperature(1.0)
                .sample_index(i);
            gateway.complete(&req).map(|c| extract_answer(&c.text))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(top_k_by_frequency(&samples, k.max(1)))
}

/// Run the protocol for one query. `forced` overrides `cfg.mode`.
pub fn run_episode(
    gateway: &Gateway,
    cfg: &EngineConfig,
    query: &QueryRecord,
    forced: Option<Decision>,
) -> Result<Episode, QueryError> {
    let id = query.id.as_str();
    let choice = forced.or(match cfg.mode {
        Mode::Auto => None,
        Mode::ForceClarify => Some(Decision::Clarify),
        Mode::ForceDirect => Some(Decision::Direct),
    });
    let initial_response = match choice {
        None => {
            let req = cfg.request(&cfg.assistant, vec![Message::user(render_assistant_turn(&query.question))]);
            gateway.complete(&req).for_query(id)?.text.trim().to_owned()
        }
        Some(Decision::Clarify) => forced_clarify(gateway, cfg, &cfg.assistant, &query.question, 0.0, 0).for_query(id)?,
        Some(Decision::Direct) => greedy_direct_answer(gateway, cfg, &cfg.assistant, &query.question).for_query(id)?,
    };
    let is_clarify = detect_clarify(&initial_response);
    let mut episode = Episode {
        query_id: query.id.clone(),
        question: query.question.clone(),
        mode: cfg.mode,
        forced,
        initial_response,
        is_clarify,
        direct_answers: None,
        per_user: None,
        model_turns: if is_clarify { 2 } else { 1 },
    };
    if is_clarify {
        episode.per_user = Some(rollout_clarify(gateway, cfg, query, &episode.initial_response)?);
    } else {
        episode.direct_answers = Some(match cfg.direct {
            DirectStrategy::Greedy => vec![extract_answer(&episode.initial_response)],
            DirectStrategy::Sampled { n_samples } => {
                sample_direct_answers(gateway, cfg, &cfg.assistant, &query.question, query.k(), n_samples).for_query(id)?
            }
        });
    }
    Ok(episode)
}

/// Run every query on a pool of `workers` threads; output follows input order.
/// The first failing query (in input order) is reported.
pub fn run_episodes(
    gateway: &Gateway,
    cfg: &EngineConfig,
    queries: &[QueryRecord],
    decisions: Option<&HashMap<String, Decision>>,
    workers: usize,
) -> Result<Vec<Episode>, QueryError> {
    let forced = |q: &QueryRecord| decisions.and_then(|d| d.get(&q.id).copied());
    in_pool(workers, || {
        queries
            .par_iter()
            .map(|q| run_episode(gateway, cfg, q, forced(q)))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect()
}

/// Run `f` on a dedicated rayon pool of `workers` threads.
pub fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UserIntent;
    use crate::gateway::{MockBackend, MockEntry};
    use crate::user_sim::AbstainReason;
    use std::sync::Arc;

    #[test]
    fn phi_prefix_rule() {
        assert!(detect_clarify(
            "Clarifying Question: Are you asking about the ancient Olympic Games or the modern Olympic Games?"
        ));
        assert!(detect_clarify("\n  Clarifying Question: which?"));
        assert!(!detect_clarify("Paul McCartney"));
        assert!(!detect_clarify("  clarifying question: which year?"));
        assert!(!detect_clarify("The Clarifying Question: x"));
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn frequency_top_k() {
        let mut s = vec!["A"; 10];
        s.extend(["B"; 6]);
        s.extend(["C"; 4]);
        assert_eq!(top_k_by_frequency(&strings(&s), 2), strings(&["A", "B"]));
        assert_eq!(top_k_by_frequency(&strings(&["A"; 20]), 3), strings(&["A"]));
        let mut tie = vec!["A"; 5];
        tie.extend(["B"; 5]);
        assert_eq!(top_k_by_frequency(&strings(&tie), 1), strings(&["A"]));
        assert_eq!(top_k_by_frequency(&strings(&["b", "a", "A.", "b"]), 2), strings(&["b", "a"]));
        assert_eq!(top_k_by_frequency(&strings(&["x", "The X", "y"]), 1), strings(&["x"]));
    }

    fn query(k: usize) -> QueryRecord {
        QueryRecord {
            id: "q1".into(),
            question: "where were the olympic games held in greece".into(),
            users: (0..k).map(|i| UserIntent::new([format!("gold{i}")])).collect(),
            ambiguous: Some(k > 1),
            split_tag: None,
        }
    }

    fn gateway(entries: Vec<MockEntry>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(entries));
        let mut gw = Gateway::new();
        gw.register("m", mock.clone());
        (gw, mock)
    }

    #[test]
    fn clarify_flow() {
        let (gw, mock) = gateway(vec![
            MockEntry::complete("Response:", "Clarifying Question: ancient or modern?"),
            MockEntry::complete("Pretend", "Clarifying Answer 1: None.\nClarifying Answer 2: modern"),
            MockEntry::complete("Clarifying Answer: modern", "gold1"),
        ]);
        let cfg = EngineConfig::new("m", "m", "m");
        let ep = run_episode(&gw, &cfg, &query(2), None).unwrap();
        ep.check(2).unwrap();
        assert!(ep.is_clarify);
        assert_eq!(ep.model_turns, 2);
        let users = ep.per_user.unwrap();
        assert_eq!(users[0].clarifying_answer.abstain_reason, Some(AbstainReason::ModelAbstained));
        assert_eq!(users[0].final_answer, None);
        assert_eq!(users[1].final_answer.as_deref(), Some("gold1"));
        assert_eq!(mock.calls_containing("Clarifying Answer:"), 1);
    }

    #[test]
    fn direct_flow_and_forcing() {
        let (gw, _) = gateway(vec![
            MockEntry::complete("Pretend", "Clarifying Answer 1: old ones"),
            MockEntry::complete("Clarifying Answer: old ones", "gold0"),
            MockEntry::complete("Clarifying Question:", "which games?"),
            MockEntry::complete("Response:", "Athens"),
            MockEntry::complete("\nAnswer:", "Olympia\nQuestion: next"),
        ]);
        let cfg = EngineConfig::new("m", "m", "m");
        let ep = run_episode(&gw, &cfg, &query(1), None).unwrap();
        ep.check(1).unwrap();
        assert_eq!(ep.direct_answers, Some(strings(&["Athens"])));
        assert_eq!(ep.model_turns, 1);

        let ep = run_episode(&gw, &cfg, &query(1), Some(Decision::Direct)).unwrap();
        assert_eq!(ep.direct_answers, Some(strings(&["Olympia"])));
        assert_eq!(ep.forced, Some(Decision::Direct));

        let ep = run_episode(&gw, &cfg, &query(1), Some(Decision::Clarify)).unwrap();
        assert_eq!(ep.initial_response, "Clarifying Question: which games?");
        assert_eq!(ep.per_user.unwrap()[0].final_answer.as_deref(), Some("gold0"));
    }

    #[test]
    fn sampled_direct_answers_use_distinct_draws() {
        let entries = (0..20u32)
            .map(|i| MockEntry::complete("Answer:", if i % 3 == 0 { "B" } else { "A" }).at_sample(i))
            .collect();
        let (gw, mock) = gateway(entries);
        let cfg = EngineConfig::new("m", "m", "m");
        let out = sample_direct_answers(&gw, &cfg, "m", "q?", 2, 20).unwrap();
        assert_eq!(out, strings(&["A", "B"]));
        assert_eq!(mock.call_count(), 20);
    }

    #[test]
    fn episode_serializes_in_declared_order() {
        let ep = Episode {
            query_id: "q".into(),
            question: "x".into(),
            mode: Mode::Auto,
            forced: None,
            initial_response: "y".into(),
            is_clarify: false,
            direct_answers: Some(strings(&["y"])),
            per_user: None,
            model_turns: 1,
        };
        assert_eq!(
            crate::dataset::lines::encode_line(&ep).unwrap(),
            r#"{"query_id":"q","question":"x","mode":"auto","initial_response":"y","is_clarify":false,"direct_answers":["y"],"model_turns":1,"schema_version":1}"#
        );
    }
}
