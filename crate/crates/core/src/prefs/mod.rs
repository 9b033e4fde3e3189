//! Double-turn preference labeling.
//!
//! Turn-2 candidates are scored by what happens after them: the Match ranker
//! rolls each clarifying question out against the simulated users and counts
//! correct final answers, the Likelihood ranker sums the probability of each
//! gold answer after the simulated reply, and the RM ranker asks a reward
//! model about the turn-2 response alone.

mod dpo;
mod rank;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::engine::{forced_clarify, greedy_direct_answer, rollout_clarify, EngineConfig};
use crate::error::{ForQuery, QueryError};
use crate::gateway::{Capability, Gateway, GatewayError, Message};
use crate::metrics::{exact_match, normalize_answer};
use crate::prompts::{render_answer_after_clarify, render_assistant_turn, render_direct_answer};
use crate::user_sim::{simulate_answers, ClarifyingAnswer};

pub use dpo::{dpo_loss, sigmoid, softplus, DpoError, DpoLoss};
pub use rank::{aggregate_rank, emit_pairs, preference_pairs, rank_scored, PreferenceRecord, ResponseRef, TieGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Clarify,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranker {
    Match,
    Likelihood,
    Rm,
}

impl FromStr for Ranker {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "match" => Ok(Ranker::Match),
            "likelihood" => Ok(Ranker::Likelihood),
            "rm" => Ok(Ranker::Rm),
            other => Err(format!("unknown ranker {other:?} (expected match, likelihood, rm)")),
        }
    }
}

impl fmt::Display for Ranker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ranker::Match => "match",
            Ranker::Likelihood => "likelihood",
            Ranker::Rm => "rm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    Greedy,
    Sampled { temperature: f64, sample_index: u32 },
}

/// One user's outcome in a candidate rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTurn {
    pub user_index: usize,
    /// Absent for direct candidates, which have no turn 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarifying_answer: Option<ClarifyingAnswer>,
    pub prediction: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub kind: CandidateKind,
    pub text: String,
    pub origin: Origin,
    /// Origins of later duplicates collapsed into this candidate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also_from: Vec<Origin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<Vec<RolloutTurn>>,
    #[serde(default)]
    pub scores: BTreeMap<Ranker, f64>,
}

impl CandidateResponse {
    pub fn new(kind: CandidateKind, text: impl Into<String>, origin: Origin) -> Self {
        Self {
            kind,
            text: text.into(),
            origin,
            also_from: Vec::new(),
            rollout: None,
            scores: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrefError {
    #[error("{ranker} ranker unavailable: {reason}")]
    RankerUnavailable { ranker: Ranker, reason: String },
    #[error("candidate {index} has no {ranker} score")]
    MissingScore { index: usize, ranker: Ranker },
    #[error("candidate {index} has a non-finite score")]
    NonFiniteScore { index: usize },
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Backends and knobs for labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefConfig {
    /// Clarifying-question generator (turn 2).
    pub clarifier: String,
    /// Greedy direct-answer candidate source, if any.
    #[serde(default)]
    pub direct: Option<String>,
    /// Include the direct candidate for Likelihood/RM rankers too.
    #[serde(default)]
    pub direct_for_all_rankers: bool,
    #[serde(default = "default_n_sampled")]
    pub n_sampled: u32,
    #[serde(default = "default_sample_temperature")]
    pub sample_temperature: f64,
    /// Teacher-forced scorer for the Likelihood ranker.
    #[serde(default)]
    pub scorer: Option<String>,
    /// Reward model for the RM ranker.
    #[serde(default)]
    pub reward_model: Option<String>,
    #[serde(default)]
    pub length_normalize: bool,
    /// Simulator and answerer used for rollouts.
    pub engine: EngineConfig,
}

fn default_n_sampled() -> u32 {
    5
}

fn default_sample_temperature() -> f64 {
    1.0
}

impl PrefConfig {
    pub fn new(clarifier: impl Into<String>, engine: EngineConfig) -> Self {
        Self {
            clarifier: clarifier.into(),
            direct: None,
            direct_for_all_rankers: false,
            n_sampled: default_n_sampled(),
            sample_temperature: default_sample_temperature(),
            scorer: None,
            reward_model: None,
            length_normalize: false,
            engine,
        }
    }

    fn direct_for(&self, ranker: Ranker) -> Option<&str> {
        self.direct
            .as_deref()
            .filter(|_| ranker == Ranker::Match || self.direct_for_all_rankers)
    }

    /// Fail before any model spend when a ranker's backends are missing.
    pub fn check(&self, gateway: &Gateway, ranker: Ranker) -> Result<(), PrefError> {
        let unavailable = |reason: String| PrefError::RankerUnavailable { ranker, reason };
        let need = |id: Option<&str>, cap: Capability, role: &str| -> Result<(), PrefError> {
            let id = id.ok_or_else(|| unavailable(format!("no {role} backend configured")))?;
            gateway.require(id, cap).map_err(|e| unavailable(e.to_string()))
        };
        need(Some(&self.clarifier), Capability::Complete, "clarifier")?;
        if let Some(d) = self.direct_for(ranker) {
            need(Some(d), Capability::Complete, "direct")?;
        }
        match ranker {
            Ranker::Match => {
                need(Some(&self.engine.simulator), Capability::Complete, "simulator")?;
                need(Some(&self.engine.answerer), Capability::Complete, "answerer")
            }
            Ranker::Likelihood => {
                need(Some(&self.engine.simulator), Capability::Complete, "simulator")?;
                need(self.scorer.as_deref(), Capability::Score, "scorer")
            }
            Ranker::Rm => need(self.reward_model.as_deref(), Capability::Reward, "reward model"),
        }
    }
}

/// Greedy plus `n_sampled` clarifying questions, and optionally one greedy
/// direct answer; duplicates (same kind, same normalized text) collapse into
/// the first occurrence.
pub fn generate_candidates(
    gateway: &Gateway,
    cfg: &PrefConfig,
    query: &QueryRecord,
    direct_backend: Option<&str>,
) -> Result<Vec<CandidateResponse>, QueryError> {
    let mut draws: Vec<(u32, f64, Origin)> = vec![(0, 0.0, Origin::Greedy)];
    draws.extend((1..=cfg.n_sampled).map(|i| {
        (
            i,
            cfg.sample_temperature,
            Origin::Sampled {
                temperature: cfg.sample_temperature,
                sample_index: i,
            },
        )
    }));
    let mut raw: Vec<CandidateResponse> = draws
        .into_par_iter()
        .map(|(i, t, origin)| {
            forced_clarify(gateway, &cfg.engine, &cfg.clarifier, &query.question, t, i)
                .map(|text| CandidateResponse::new(CandidateKind::Clarify, text, origin))
                .for_query(&query.id)
        })
        .collect::<Result<_, _>>()?;
    if let Some(backend) = direct_backend {
        let text = greedy_direct_answer(gateway, &cfg.engine, backend, &query.question).for_query(&query.id)?;
        raw.push(CandidateResponse::new(CandidateKind::Direct, text, Origin::Greedy));
    }
    Ok(dedup_candidates(raw))
}

pub fn dedup_candidates(raw: Vec<CandidateResponse>) -> Vec<CandidateResponse> {
    let mut out: Vec<CandidateResponse> = Vec::new();
    let mut seen: HashMap<(CandidateKind, String), usize> = HashMap::new();
    for c in raw {
        match seen.get(&(c.kind, normalize_answer(&c.text))) {
            Some(&i) => out[i].also_from.push(c.origin),
            None => {
                seen.insert((c.kind, normalize_answer(&c.text)), out.len());
                out.push(c);
            }
        }
    }
    out
}

/// Mean per-user EM after a simulated rollout; stores the rollout.
pub fn score_match(gateway: &Gateway, cfg: &EngineConfig, candidate: &mut CandidateResponse, query: &QueryRecord) -> Result<f64, QueryError> {
    let rollout: Vec<RolloutTurn> = match candidate.kind {
        CandidateKind::Clarify => rollout_clarify(gateway, cfg, query, &candidate.text)?
            .into_iter()
            .map(|t| {
                let correct = t
                    .final_answer
                    .as_deref()
                    .is_some_and(|f| !t.clarifying_answer.is_abstain() && exact_match(f, &query.users[t.user_index].answers));
                RolloutTurn {
                    user_index: t.user_index,
                    clarifying_answer: Some(t.clarifying_answer),
                    prediction: t.final_answer,
                    correct,
                }
            })
            .collect(),
        CandidateKind::Direct => query
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| RolloutTurn {
                user_index: i,
                clarifying_answer: None,
                prediction: Some(candidate.text.clone()),
                correct: exact_match(&candidate.text, &u.answers),
            })
            .collect(),
    };
    let score = rollout.iter().filter(|t| t.correct).count() as f64 / query.k().max(1) as f64;
    candidate.rollout = Some(rollout);
    candidate.scores.insert(Ranker::Match, score);
    Ok(score)
}

/// Gold-answer continuation scored by the Likelihood ranker.
fn gold_target(answer: &str) -> String {
    format!(" {answer}")
}

fn probability(score: crate::gateway::TargetScore, length_normalize: bool) -> Result<f64, PrefError> {
    if !length_normalize {
        return Ok(score.total_logprob.exp());
    }
    match score.n_tokens {
        Some(0) => Ok(1.0),
        Some(n) => Ok((score.total_logprob / f64::from(n)).exp()),
        None => Err(PrefError::RankerUnavailable {
            ranker: Ranker::Likelihood,
            reason: "length normalization needs token counts from the scorer".into(),
        }),
    }
}

/// Σ_i P(y_i | x, q, a_i); abstaining users contribute 0.
pub fn score_likelihood(
    gateway: &Gateway,
    cfg: &PrefConfig,
    candidate: &mut CandidateResponse,
    query: &QueryRecord,
) -> Result<f64, PrefError> {
    let scorer = cfg.scorer.as_deref().ok_or_else(|| PrefError::RankerUnavailable {
        ranker: Ranker::Likelihood,
        reason: "no scorer backend configured".into(),
    })?;
    gateway.require(scorer, Capability::Score).map_err(|e| PrefError::RankerUnavailable {
        ranker: Ranker::Likelihood,
        reason: e.to_string(),
    })?;
    let score_one = |prompt: String, answer: &str| -> Result<f64, PrefError> {
        let s = gateway
            .score(scorer, &[Message::user(prompt)], &gold_target(answer))
            .for_query(&query.id)?;
        probability(s, cfg.length_normalize)
    };
    let total = match candidate.kind {
        CandidateKind::Clarify => {
            let replies: Vec<ClarifyingAnswer> = match &candidate.rollout {
                Some(r) if r.iter().all(|t| t.clarifying_answer.is_some()) => {
                    r.iter().filter_map(|t| t.clarifying_answer.clone()).collect()
                }
                _ => simulate_answers(gateway, query, &candidate.text, &cfg.engine.simulator, cfg.engine.sim)?,
            };
            let mut sum = 0.0;
            for reply in &replies {
                if let Some(a) = &reply.value {
                    let prompt = render_answer_after_clarify(&query.question, &candidate.text, a);
                    sum += score_one(prompt, query.users[reply.user_index].primary_answer())?;
                }
            }
            sum
        }
        CandidateKind::Direct => {
            let mut sum = 0.0;
            for u in &query.users {
                sum += score_one(render_direct_answer(&query.question), u.primary_answer())?;
            }
            sum
        }
    };
    candidate.scores.insert(Ranker::Likelihood, total);
    Ok(total)
}

/// Reward for the turn-2 response given the user turn.
pub fn score_rm(
    gateway: &Gateway,
    rm_backend: &str,
    candidate: &mut CandidateResponse,
    query: &QueryRecord,
) -> Result<f64, PrefError> {
    let r = gateway
        .reward(rm_backend, &[Message::user(render_assistant_turn(&query.question))], &candidate.text)
        .map_err(|e| match e {
            GatewayError::UnknownBackend(_) | GatewayError::Unsupported { .. } => PrefError::RankerUnavailable {
                ranker: Ranker::Rm,
                reason: e.to_string(),
            },
            other => QueryError::new(&query.id, other).into(),
        })?;
    candidate.scores.insert(Ranker::Rm, r.0);
    Ok(r.0)
}

/// Everything produced for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_id: String,
    pub candidates: Vec<CandidateResponse>,
    pub ranking: Vec<TieGroup>,
    pub pairs: Vec<PreferenceRecord>,
}

impl LabeledQuery {
    /// Tie groups with more than one member.
    pub fn tie_groups(&self) -> usize {
        self.ranking.iter().filter(|g| g.members.len() > 1).count()
    }
}

/// Generate, score, rank, and pair candidates for one query.
pub fn label_query(gateway: &Gateway, cfg: &PrefConfig, query: &QueryRecord, ranker: Ranker) -> Result<LabeledQuery, PrefError> {
    let mut candidates = generate_candidates(gateway, cfg, query, cfg.direct_for(ranker))?;
    candidates
        .par_iter_mut()
        .map(|c| -> Result<f64, PrefError> {
            match ranker {
                Ranker::Match => Ok(score_match(gateway, &cfg.engine, c, query)?),
                Ranker::Likelihood => score_likelihood(gateway, cfg, c, query),
                Ranker::Rm => {
                    let rm = cfg.reward_model.as_deref().ok_or_else(|| PrefError::RankerUnavailable {
                        ranker,
                        reason: "no reward model configured".into(),
                    })?;
                    score_rm(gateway, rm, c, query)
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ranking = aggregate_rank(&candidates, ranker)?;
    let pairs = emit_pairs(&ranking, &candidates, &query.id, &render_assistant_turn(&query.question), ranker);
    Ok(LabeledQuery {
        query_id: query.id.clone(),
        candidates,
        ranking,
        pairs,
    })
}

/// Counts reported after a labeling run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub ranker: Option<Ranker>,
    pub queries: usize,
    pub candidates: usize,
    pub tie_groups: usize,
    pub pairs: usize,
    pub queries_without_pairs: usize,
}

impl LabelSummary {
    pub fn from_results(ranker: Ranker, results: &[LabeledQuery]) -> Self {
        Self {
            ranker: Some(ranker),
            queries: results.len(),
            candidates: results.iter().map(|r| r.candidates.len()).sum(),
            tie_groups: results.iter().map(LabeledQuery::tie_groups).sum(),
            pairs: results.iter().map(|r| r.pairs.len()).sum(),
            queries_without_pairs: results.iter().filter(|r| r.pairs.is_empty()).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UserIntent;
    use crate::gateway::{Capabilities, MockBackend, MockEntry};
    use std::sync::Arc;

    fn starbucks() -> QueryRecord {
        QueryRecord {
            id: "starbucks".into(),
            question: "How many starbucks are there around the world".into(),
            users: ["28,218", "4,962", "23,768", "30,000"].iter().map(|a| UserIntent::new([*a])).collect(),
            ambiguous: Some(true),
            split_tag: None,
        }
    }

    fn gw(entries: Vec<MockEntry>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(entries));
        let mut g = Gateway::new();
        g.register("m", mock.clone());
        (g, mock)
    }

    #[test]
    fn direct_candidate_match() {
        let (g, _) = gw(vec![]);
        let mut c = CandidateResponse::new(CandidateKind::Direct, "28,218", Origin::Greedy);
        let s = score_match(&g, &EngineConfig::new("m", "m", "m"), &mut c, &starbucks()).unwrap();
        assert_eq!(s, 0.25);
    }

    #[test]
    fn identical_samples_collapse() {
        let (g, _) = gw(vec![
            MockEntry::complete("Response:", " Which year?"),
            MockEntry::complete("\nAnswer:", "about 28,000"),
        ]);
        let cfg = PrefConfig::new("m", EngineConfig::new("m", "m", "m"));
        let c = generate_candidates(&g, &cfg, &starbucks(), None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "Clarifying Question: Which year?");
        assert_eq!(c[0].also_from.len(), 5);
        let c = generate_candidates(&g, &cfg, &starbucks(), Some("m")).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].kind, CandidateKind::Direct);
    }

    #[test]
    fn likelihood_sums_probabilities() {
        let q = QueryRecord {
            users: vec![UserIntent::new(["a"]), UserIntent::new(["b"]), UserIntent::new(["c"])],
            ..starbucks()
        };
        let (g, _) = gw(vec![
            MockEntry::complete("Pretend", "Clarifying Answer 1: one\nClarifying Answer 2: two\nClarifying Answer 3: None"),
            MockEntry::score("Clarifying Answer: one", " a", 0.5f64.ln()),
            MockEntry::score_tokens("Clarifying Answer: two", " b", vec![0.5f64.ln(), 0.5f64.ln()]),
        ]);
        let mut cfg = PrefConfig::new("m", EngineConfig::new("m", "m", "m"));
        cfg.scorer = Some("m".into());
        let mut c = CandidateResponse::new(CandidateKind::Clarify, "Clarifying Question: which?", Origin::Greedy);
        let s = score_likelihood(&g, &cfg, &mut c, &q).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
        cfg.length_normalize = true;
        assert!(matches!(
            score_likelihood(&g, &cfg, &mut c, &q),
            Err(PrefError::RankerUnavailable { .. })
        ));
    }

    #[test]
    fn rankers_need_capabilities() {
        let mock = Arc::new(MockBackend::new(vec![]).with_capabilities(Capabilities::COMPLETE_ONLY));
        let mut g = Gateway::new();
        g.register("m", mock);
        let mut cfg = PrefConfig::new("m", EngineConfig::new("m", "m", "m"));
        cfg.scorer = Some("m".into());
        assert!(cfg.check(&g, Ranker::Match).is_ok());
        assert!(matches!(cfg.check(&g, Ranker::Likelihood), Err(PrefError::RankerUnavailable { .. })));
        assert!(matches!(cfg.check(&g, Ranker::Rm), Err(PrefError::RankerUnavailable { .. })));
        let mut c = CandidateResponse::new(CandidateKind::Clarify, "Clarifying Question: x", Origin::Greedy);
        assert!(matches!(
            score_rm(&g, "absent", &mut c, &starbucks()),
            Err(PrefError::RankerUnavailable { .. })
        ));
        assert!(c.scores.is_empty());
    }

    #[test]
    fn rm_ranking_follows_rewards() {
        let (g, _) = gw(vec![
            MockEntry::complete("Response:", "c1").at_sample(0),
            MockEntry::complete("Response:", "c2"),
            MockEntry::reward("Clarifying Question: c1", 0.2),
            MockEntry::reward("Clarifying Question: c2", -0.1),
        ]);
        let mut cfg = PrefConfig::new("m", EngineConfig::new("m", "m", "m"));
        cfg.reward_model = Some("m".into());
        cfg.direct = Some("m".into());
        let out = label_query(&g, &cfg, &starbucks(), Ranker::Rm).unwrap();
        assert_eq!(out.candidates.len(), 2);
        assert_eq!(out.ranking[0].members, vec![0]);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].preferred.text, "Clarifying Question: c1");
        assert_eq!(out.pairs[0].score_preferred, 0.2);
    }
}
