//! Clarifying-question SFT data.
//!
//! Feasible answer sets come either straight from annotations or from
//! repeated few-shot sampling of a base model. Sets with at least two answers
//! are shown to an oracle that proposes a clarifying question and one
//! clarifying answer per feasible answer; the surviving pairs become
//! `(x, q, a, y)` rows.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::QueryRecord;
use crate::error::{ForQuery, QueryError};
use crate::gateway::{Gateway, GatewayRequest, Message};
use crate::metrics::{exact_match, normalize_answer};
use crate::prompts::{
    extract_answer, parse_sft_gen_output, render_fewshot_qa, render_sft_gen_prompt, with_clarify_prefix, FewShotPool,
    PromptError, SftGenParse,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleAnswerSet {
    pub query_id: String,
    pub question: String,
    /// Distinct under normalization, first-seen order.
    pub answers: Vec<String>,
    pub source: AnswerSource,
    /// Whether any answer matches any gold alias.
    pub gold_overlap: bool,
}

/// Keep the first surface form of each normalized answer; drop blanks.
pub fn dedup_answers<S: AsRef<str>>(answers: impl IntoIterator<Item = S>) -> Vec<String> {
    let mut seen = HashSet::new();
    answers
        .into_iter()
        .map(|a| a.as_ref().trim().to_owned())
        .filter(|a| {
            let n = normalize_answer(a);
            !n.is_empty() && seen.insert(n)
        })
        .collect()
}

fn overlaps_gold(answers: &[String], query: &QueryRecord) -> bool {
    let golds: Vec<&str> = query.users.iter().flat_map(|u| u.answers.iter().map(String::as_str)).collect();
    answers.iter().any(|a| exact_match(a, &golds))
}

/// The annotated answers, one per user, as a feasible set.
pub fn build_feasible_human(query: &QueryRecord) -> FeasibleAnswerSet {
    let answers = dedup_answers(query.users.iter().map(|u| u.primary_answer()));
    FeasibleAnswerSet {
        query_id: query.id.clone(),
        question: query.question.clone(),
        gold_overlap: overlaps_gold(&answers, query),
        answers,
        source: AnswerSource::Human,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibleModelConfig {
    pub reps: u32,
    pub shots: usize,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for FeasibleModelConfig {
    fn default() -> Self {
        Self {
            reps: 10,
            shots: 5,
            seed: 0,
            max_tokens: 32,
        }
    }
}

/// First eight bytes of SHA-256, as a stable per-string stream id.
pub fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Greedy and sampled few-shot answers over `reps` fresh exemplar draws.
pub fn build_feasible_model(
    gateway: &Gateway,
    query: &QueryRecord,
    backend: &str,
    pool: &FewShotPool,
    cfg: &FeasibleModelConfig,
) -> Result<FeasibleAnswerSet, QueryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stable_hash(&query.id));
    let mut raw = Vec::with_capacity(2 * cfg.reps as usize);
    for rep in 0..cfg.reps {
        let exemplars = pool.draw(&query.question, cfg.shots, &mut rng).for_query(&query.id)?;
        let prompt = render_fewshot_qa(&query.question, &exemplars, cfg.shots).for_query(&query.id)?;
        for temperature in [0.0, 1.0] {
            let req = GatewayRequest::new(backend, vec![Message::user(prompt.clone())])
                .temperature(temperature)
                .max_tokens(cfg.max_tokens)
                .sample_index(rep);
            raw.push(extract_answer(&gateway.complete(&req).for_query(&query.id)?.text));
        }
    }
    let answers = dedup_answers(&raw);
    Ok(FeasibleAnswerSet {
        query_id: query.id.clone(),
        question: query.question.clone(),
        gold_overlap: overlaps_gold(&answers, query),
        answers,
        source: AnswerSource::Model,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub a: String,
    pub y: String,
}

/// Nested SFT record `(x, q, {(a_i, y_i)})`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub query_id: String,
    pub x: String,
    /// Carries the clarify prefix.
    pub q: String,
    pub pairs: Vec<SftPair>,
    pub source: AnswerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    SingleAnswer,
    NoGoldOverlap,
    OracleNone,
    ParseError,
    NoMatchedPairs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub query_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SftRun {
    pub examples: Vec<SftExample>,
    pub skipped: Vec<Skipped>,
}

fn pre_filter(set: &FeasibleAnswerSet) -> Option<SkipReason> {
    if set.answers.len() < 2 {
        Some(SkipReason::SingleAnswer)
    } else if set.source == AnswerSource::Model && !set.gold_overlap {
        Some(SkipReason::NoGoldOverlap)
    } else {
        None
    }
}

fn generate_one(gateway: &Gateway, set: &FeasibleAnswerSet, oracle: &str) -> Result<Result<SftExample, SkipReason>, QueryError> {
    if let Some(reason) = pre_filter(set) {
        return Ok(Err(reason));
    }
    let prompt = render_sft_gen_prompt(&set.question, &set.answers).for_query(&set.query_id)?;
    let req = GatewayRequest::new(oracle, vec![Message::user(prompt)]).max_tokens(512);
    let raw = gateway.complete(&req).for_query(&set.query_id)?.text;
    Ok(match parse_sft_gen_output(&raw, &set.answers) {
        Ok(SftGenParse::None) => Err(SkipReason::OracleNone),
        Ok(SftGenParse::Clarify {
            clarifying_question,
            pairs,
            ..
        }) => Ok(SftExample {
            query_id: set.query_id.clone(),
            x: set.question.clone(),
            q: with_clarify_prefix(&clarifying_question),
            pairs: pairs
                .into_iter()
                .map(|p| SftPair {
                    a: p.clarifying_answer,
                    y: p.response,
                })
                .collect(),
            source: set.source,
        }),
        Err(PromptError::NoMatchedPairs { .. }) => Err(SkipReason::NoMatchedPairs),
        Err(e) => {
            tracing::warn!(query = %set.query_id, error = %e, "skipping unparseable oracle output");
            Err(SkipReason::ParseError)
        }
    })
}

/// Prompt the oracle for every eligible set. Output follows input order;
/// only gateway failures abort the run.
pub fn generate_sft_examples(gateway: &Gateway, sets: &[FeasibleAnswerSet], oracle: &str) -> Result<SftRun, QueryError> {
    let results = sets
        .par_iter()
        .map(|s| generate_one(gateway, s, oracle))
        .collect::<Vec<_>>();
    let mut run = SftRun::default();
    for (set, r) in sets.iter().zip(results) {
        match r? {
            Ok(ex) => run.examples.push(ex),
            Err(reason) => run.skipped.push(Skipped {
                query_id: set.query_id.clone(),
                reason,
            }),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

/// Deterministic split of an id: train iff its hash falls below `train_ratio`.
pub fn split_for(id: &str, train_ratio: f64) -> Split {
    let u = stable_hash(id) as f64 / (u64::MAX as f64 + 1.0);
    if u < train_ratio {
        Split::Train
    } else {
        Split::Dev
    }
}

/// Train share of the clarifying-question SFT sets (4,000 of 4,400).
pub const DEFAULT_TRAIN_RATIO: f64 = 4000.0 / 4400.0;

/// Flat `(x, q, a, y)` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRow {
    pub query_id: String,
    pub x: String,
    pub q: String,
    pub a: String,
    pub y: String,
    pub source: AnswerSource,
    pub split: Split,
}

/// Direct-answer row `(x, y)` projected from a flat row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectRow {
    pub query_id: String,
    pub x: String,
    pub y: String,
    pub source: AnswerSource,
    pub split: Split,
}

impl From<&SftRow> for DirectRow {
    fn from(r: &SftRow) -> Self {
        Self {
            query_id: r.query_id.clone(),
            x: r.x.clone(),
            y: r.y.clone(),
            source: r.source,
            split: r.split,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftStats {
    pub n_xq: usize,
    pub n_xqay: usize,
    pub n_xq_train: usize,
    pub n_xqay_train: usize,
    pub n_xq_dev: usize,
    pub n_xqay_dev: usize,
}

pub fn flatten_and_stats(examples: &[SftExample], train_ratio: f64) -> (Vec<SftRow>, SftStats) {
    let mut stats = SftStats::default();
    let mut rows = Vec::new();
    for ex in examples {
        let split = split_for(&ex.query_id, train_ratio);
        stats.n_xq += 1;
        stats.n_xqay += ex.pairs.len();
        match split {
            Split::Train => {
                stats.n_xq_train += 1;
                stats.n_xqay_train += ex.pairs.len();
            }
            Split::Dev => {
                stats.n_xq_dev += 1;
                stats.n_xqay_dev += ex.pairs.len();
            }
        }
        rows.extend(ex.pairs.iter().map(|p| SftRow {
            query_id: ex.query_id.clone(),
            x: ex.x.clone(),
            q: ex.q.clone(),
            a: p.a.clone(),
            y: p.y.clone(),
            source: ex.source,
            split,
        }));
    }
    (rows, stats)
}

/// Dev share of the RLHF query pool (6,320 of 70,904).
pub const DEFAULT_RLHF_DEV_RATIO: f64 = 6320.0 / 70904.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RlhfPool {
    pub train: Vec<QueryRecord>,
    pub dev: Vec<QueryRecord>,
    pub excluded: usize,
}

/// Drop queries used for SFT (by id or normalized question) and split the rest.
pub fn derive_rlhf_pool(pool: &[QueryRecord], used_for_sft: &[QueryRecord], dev_ratio: f64) -> RlhfPool {
    let ids: HashSet<&str> = used_for_sft.iter().map(|q| q.id.as_str()).collect();
    let questions: HashSet<String> = used_for_sft.iter().map(|q| normalize_answer(&q.question)).collect();
    let mut out = RlhfPool::default();
    for q in pool {
        if ids.contains(q.id.as_str()) || questions.contains(&normalize_answer(&q.question)) {
            out.excluded += 1;
        } else if split_for(&q.id, 1.0 - dev_ratio) == Split::Train {
            out.train.push(q.clone());
        } else {
            out.dev.push(q.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UserIntent;
    use crate::gateway::{MockBackend, MockEntry};
    use crate::prompts::Exemplar;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn query(id: &str, question: &str, golds: &[&str]) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            question: question.into(),
            users: golds.iter().map(|g| UserIntent::new([*g])).collect(),
            ambiguous: Some(golds.len() > 1),
            split_tag: None,
        }
    }

    fn gw(entries: Vec<MockEntry>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(entries));
        let mut g = Gateway::new();
        g.register("m", mock.clone());
        (g, mock)
    }

    fn pool() -> FewShotPool {
        FewShotPool::new((0..20).map(|i| Exemplar::new(format!("pool question {i}?"), format!("a{i}"))).collect())
    }

    #[test]
    fn model_feasible_dedups_over_reps() {
        let (g, mock) = gw(vec![
            MockEntry::complete("Question: target?", "Alpha").at_temperature(0.0),
            MockEntry::complete("Question: target?", "the alpha.").at_sample(3),
            MockEntry::complete("Question: target?", "B"),
        ]);
        let q = query("t", "target?", &["b"]);
        let set = build_feasible_model(&g, &q, "m", &pool(), &FeasibleModelConfig::default()).unwrap();
        assert_eq!(set.answers, vec!["Alpha", "B"]);
        assert!(set.gold_overlap);
        assert_eq!(mock.call_count(), 20);
        let again = build_feasible_model(&g, &q, "m", &pool(), &FeasibleModelConfig::default()).unwrap();
        assert_eq!(again, set);
        assert_eq!(dedup_answers(&set.answers), set.answers);

        let (g, _) = gw(vec![MockEntry::complete("Answer:", "X")]);
        let set = build_feasible_model(&g, &query("t", "target?", &["Y"]), "m", &pool(), &FeasibleModelConfig::default()).unwrap();
        assert_eq!(set.answers, vec!["X"]);
        assert!(!set.gold_overlap);
    }

    #[test]
    fn olympics_example() {
        let (g, _) = gw(vec![MockEntry::complete(
            "Possible Responses:",
            "Clarifying Question: Are you asking about the ancient Olympic Games or the modern Olympic Games?\n1. Clarifying Answer: Ancient Olympic Games\n1. Response: Olympia\n2. Clarifying Answer: Modern Olympic Games\n2. Response: Athens",
        )]);
        let set = build_feasible_human(&query("o", "where were the olympic games held in greece", &["Olympia", "Athens"]));
        let run = generate_sft_examples(&g, &[set], "m").unwrap();
        assert_eq!(run.examples.len(), 1);
        let ex = &run.examples[0];
        assert!(ex.q.starts_with("Clarifying Question: Are you asking about the ancient"));
        assert_eq!(ex.pairs[1], SftPair { a: "Modern Olympic Games".into(), y: "Athens".into() });
    }

    #[test]
    fn skips_and_partial_pairs() {
        let (g, mock) = gw(vec![
            MockEntry::complete("1. x\n2. y", "None"),
            MockEntry::complete("1. red\n2. blue\n3. green", "Clarifying Question: which?\n1. Clarifying Answer: first\n1. Response: blue"),
            MockEntry::complete("1. p\n2. q", "garbage"),
        ]);
        let sets = vec![
            build_feasible_human(&query("none", "n?", &["x", "y"])),
            build_feasible_human(&query("partial", "p?", &["red", "blue", "green"])),
            build_feasible_human(&query("single", "s?", &["only"])),
            FeasibleAnswerSet {
                gold_overlap: false,
                source: AnswerSource::Model,
                ..build_feasible_human(&query("nogold", "g?", &["u", "v"]))
            },
            build_feasible_human(&query("bad", "b?", &["p", "q"])),
        ];
        let run = generate_sft_examples(&g, &sets, "m").unwrap();
        assert_eq!(run.examples.len(), 1);
        assert_eq!(run.examples[0].pairs, vec![SftPair { a: "first".into(), y: "blue".into() }]);
        let reasons: Vec<_> = run.skipped.iter().map(|s| (s.query_id.as_str(), s.reason)).collect();
        assert_eq!(
            reasons,
            vec![
                ("none", SkipReason::OracleNone),
                ("single", SkipReason::SingleAnswer),
                ("nogold", SkipReason::NoGoldOverlap),
                ("bad", SkipReason::ParseError),
            ]
        );
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn stats() {
        assert_eq!(flatten_and_stats(&[], 0.9).1, SftStats::default());
        let ex = SftExample {
            query_id: "q".into(),
            x: "x".into(),
            q: "Clarifying Question: ?".into(),
            pairs: vec![SftPair { a: "a1".into(), y: "y1".into() }, SftPair { a: "a2".into(), y: "y2".into() }],
            source: AnswerSource::Human,
        };
        let (rows, s) = flatten_and_stats(&[ex], 0.9);
        assert_eq!((s.n_xq, s.n_xqay), (1, 2));
        assert_eq!(rows.len(), 2);
        assert_eq!(DirectRow::from(&rows[1]).y, "y2");
    }

    #[test]
    fn rlhf_pool_excludes_sft_queries() {
        let pool: Vec<QueryRecord> = (0..200).map(|i| query(&format!("p{i}"), &format!("question {i}?"), &["a"])).collect();
        let sft = vec![query("p0", "other", &["a"]), query("zz", "Question 1", &["a"])];
        let out = derive_rlhf_pool(&pool, &sft, 0.25);
        assert_eq!(out.excluded, 2);
        assert_eq!(out.train.len() + out.dev.len(), 198);
        assert!(out.dev.len() > 20 && out.dev.len() < 80, "{}", out.dev.len());
        assert_eq!(derive_rlhf_pool(&pool, &sft, 0.25).dev, out.dev);
    }

    proptest! {
        #[test]
        fn oracle_cannot_invent_answers(
            answers in proptest::collection::vec("[a-z]{1,6}", 2..5),
            responses in proptest::collection::vec("[a-z]{1,6}", 1..5),
        ) {
            let set = FeasibleAnswerSet {
                query_id: "q".into(),
                question: "q?".into(),
                answers: dedup_answers(&answers),
                source: AnswerSource::Human,
                gold_overlap: true,
            };
            prop_assume!(set.answers.len() >= 2);
            let body: String = responses.iter().enumerate()
                .map(|(i, r)| format!("\n{n}. Clarifying Answer: c{n}\n{n}. Response: {r}", n = i + 1))
                .collect();
            let (g, _) = gw(vec![MockEntry::complete("", format!("Clarifying Question: which?{body}"))]);
            let run = generate_sft_examples(&g, std::slice::from_ref(&set), "m").unwrap();
            for ex in &run.examples {
                for p in &ex.pairs {
                    prop_assert!(set.answers.contains(&p.y));
                }
            }
        }
    }
}
