//! Run-level reports: split F1s, turns, decision accuracies.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::engine::{Decision, Episode};

use super::{answer_set_f1, exact_match, MetricError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub all: usize,
    pub unambiguous: usize,
    pub ambiguous: usize,
    pub unlabeled: usize,
}

/// Effectiveness and efficiency of one run. Split F1s are `None` when the
/// split is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_all: f64,
    pub f1_ambiguous: Option<f64>,
    pub f1_unambiguous: Option<f64>,
    pub mean_turns: f64,
    pub n_by_split: SplitCounts,
    pub per_query_f1: Vec<QueryScore>,
}

pub fn mean_turns(episodes: &[Episode]) -> Result<f64, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(episodes.iter().map(|e| f64::from(e.model_turns)).sum::<f64>() / episodes.len() as f64)
}

fn index_queries(queries: &[QueryRecord]) -> HashMap<&str, &QueryRecord> {
    queries.iter().map(|q| (q.id.as_str(), q)).collect()
}

fn lookup<'a>(index: &HashMap<&str, &'a QueryRecord>, id: &str) -> Result<&'a QueryRecord, MetricError> {
    index.get(id).copied().ok_or_else(|| MetricError::UnknownQuery(id.to_owned()))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Score every episode; per-query scores follow episode order.
pub fn evaluate(episodes: &[Episode], queries: &[QueryRecord]) -> Result<EvalReport, MetricError> {
    let index = index_queries(queries);
    let mut per_query = Vec::with_capacity(episodes.len());
    let (mut amb, mut unamb) = (Vec::new(), Vec::new());
    let mut counts = SplitCounts::default();
    for ep in episodes {
        let q = lookup(&index, &ep.query_id)?;
        let f1 = answer_set_f1(ep, q)?;
        counts.all += 1;
        match q.ambiguous {
            Some(true) => {
                counts.ambiguous += 1;
                amb.push(f1);
            }
            Some(false) => {
                counts.unambiguous += 1;
                unamb.push(f1);
            }
            None => counts.unlabeled += 1,
        }
        per_query.push(QueryScore {
            query_id: ep.query_id.clone(),
            f1,
        });
    }
    let all: Vec<f64> = per_query.iter().map(|s| s.f1).collect();
    Ok(EvalReport {
        f1_all: mean(&all).ok_or(MetricError::Empty)?,
        f1_ambiguous: mean(&amb),
        f1_unambiguous: mean(&unamb),
        mean_turns: mean_turns(episodes)?,
        n_by_split: counts,
        per_query_f1: per_query,
    })
}

/// How well clarify-or-answer choices agree with the ambiguity labels.
/// Accuracies are `None` when any query lacks an ambiguity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub n: usize,
    pub direct_answer_pct: f64,
    pub direct_answer_acc: Option<f64>,
    pub ambig_acc: Option<f64>,
}

/// `greedy` maps query id to the greedy direct-answer prediction.
pub fn decision_accuracies(
    episodes: &[Episode],
    queries: &[QueryRecord],
    greedy: &HashMap<String, String>,
) -> Result<DecisionReport, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::Empty);
    }
    let index = index_queries(queries);
    let (mut n_direct, mut da_hits, mut amb_hits) = (0usize, 0usize, 0usize);
    let mut labeled = true;
    for ep in episodes {
        let q = lookup(&index, &ep.query_id)?;
        let answer = greedy
            .get(&ep.query_id)
            .ok_or_else(|| MetricError::MissingGreedy(ep.query_id.clone()))?;
        let chose_direct = !ep.is_clarify;
        n_direct += usize::from(chose_direct);
        let Some(ambiguous) = q.ambiguous else {
            labeled = false;
            continue;
        };
        let all_aliases: Vec<&str> = q.users.iter().flat_map(|u| u.answers.iter().map(String::as_str)).collect();
        let da_label = !ambiguous && exact_match(answer, &all_aliases);
        da_hits += usize::from(chose_direct == da_label);
        amb_hits += usize::from(ep.is_clarify == ambiguous);
    }
    let n = episodes.len();
    let frac = |x: usize| x as f64 / n as f64;
    Ok(DecisionReport {
        n,
        direct_answer_pct: frac(n_direct),
        direct_answer_acc: labeled.then(|| frac(da_hits)),
        ambig_acc: labeled.then(|| frac(amb_hits)),
    })
}

/// Mark exactly `round(direct_pct * n)` queries direct, uniformly at random.
pub fn random_decision_baseline<S: AsRef<str>>(ids: &[S], direct_pct: f64, seed: u64) -> BTreeMap<String, Decision> {
    let n = ids.len();
    let m = ((direct_pct.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: BTreeMap<String, Decision> = ids.iter().map(|id| (id.as_ref().to_owned(), Decision::Clarify)).collect();
    for i in sample(&mut rng, n, m) {
        out.insert(ids[i].as_ref().to_owned(), Decision::Direct);
    }
    out
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{:.1}", 100.0 * v))
}

/// Text table with one row per named report.
pub fn render_table(rows: &[(String, EvalReport, Option<DecisionReport>)]) -> String {
    let header = ["System", "Unamb F1", "Amb F1", "All F1", "# Turns", "DA%", "DA Acc", "Ambig Acc"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (name, r, d) in rows {
        cells.push(vec![
            name.clone(),
            pct(r.f1_unambiguous),
            pct(r.f1_ambiguous),
            pct(Some(r.f1_all)),
            format!("{:.2}", r.mean_turns),
            pct(d.as_ref().map(|d| d.direct_answer_pct)),
            pct(d.as_ref().and_then(|d| d.direct_answer_acc)),
            pct(d.as_ref().and_then(|d| d.ambig_acc)),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}
