//! Per-query answer-set F1 in the two regimes.

use std::collections::HashSet;

use crate::dataset::{reference_groups, QueryRecord, UserIntent};
use crate::engine::Episode;

use super::{exact_match, normalize_answer, MetricError};

/// Paired F1 of a clarify episode: the fraction of users whose own final
/// answer matches their own gold aliases. `finals[i]` is `None` for abstainers.
pub fn clarify_f1<S: AsRef<str>>(finals: &[Option<S>], users: &[UserIntent]) -> f64 {
    if users.is_empty() {
        return 0.0;
    }
    let correct = finals
        .iter()
        .zip(users)
        .filter(|(f, u)| f.as_ref().is_some_and(|f| exact_match(f.as_ref(), &u.answers)))
        .count();
    correct as f64 / users.len() as f64
}

/// Set F1 between a predicted answer set and the query's reference groups,
/// under a maximum one-to-one matching.
pub fn direct_f1<S: AsRef<str>>(preds: &[S], users: &[UserIntent]) -> f64 {
    let mut seen = HashSet::new();
    let preds: Vec<&str> = preds
        .iter()
        .map(AsRef::as_ref)
        .filter(|p| seen.insert(normalize_answer(p)))
        .collect();
    let groups: Vec<Vec<&str>> = reference_groups(users)
        .into_iter()
        .map(|g| g.iter().flat_map(|&i| users[i].answers.iter().map(String::as_str)).collect())
        .collect();
    if preds.is_empty() || groups.is_empty() {
        return 0.0;
    }
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..groups.len()).filter(|&g| exact_match(p, &groups[g])).collect())
        .collect();
    let m = max_matching(&adj, groups.len());
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / preds.len() as f64;
    let r = m as f64 / groups.len() as f64;
    2.0 * p * r / (p + r)
}

/// Size of a maximum bipartite matching (augmenting paths).
fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    (0..adj.len())
        .filter(|&u| augment(u, adj, &mut vec![false; n_right], &mut owner))
        .count()
}

/// F1 of one episode against its query.
pub fn answer_set_f1(episode: &Episode, query: &QueryRecord) -> Result<f64, MetricError> {
    if episode.query_id != query.id {
        return Err(MetricError::Mismatch {
            episode: episode.query_id.clone(),
            query: query.id.clone(),
        });
    }
    match (&episode.per_user, &episode.direct_answers) {
        (Some(turns), None) if episode.is_clarify && turns.len() == query.k() => {
            let mut finals: Vec<Option<&str>> = vec![None; query.k()];
            for t in turns {
                let slot = finals.get_mut(t.user_index).ok_or_else(|| MetricError::Malformed(episode.query_id.clone()))?;
                *slot = t.final_answer.as_deref().filter(|_| !t.clarifying_answer.is_abstain());
            }
            Ok(clarify_f1(&finals, &query.users))
        }
        (None, Some(preds)) if !episode.is_clarify => Ok(direct_f1(preds, &query.users)),
        _ => Err(MetricError::Malformed(episode.query_id.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn users(golds: &[&[&str]]) -> Vec<UserIntent> {
        golds.iter().map(|g| UserIntent::new(g.iter().copied())).collect()
    }

    #[test]
    fn starbucks_paired() {
        let u = users(&[&["28,218"], &["4,962"], &["23,768"], &["30,000"]]);
        let finals = [Some("28,218"), Some("6,000"), Some("23,768"), Some("25,000")];
        assert_eq!(clarify_f1(&finals, &u), 0.5);
    }

    #[test]
    fn direct_examples() {
        assert_eq!(direct_f1(&["a"], &users(&[&["a"]])), 1.0);
        assert_eq!(direct_f1(&["x", "y"], &users(&[&["x"], &["z"]])), 0.5);
        assert_eq!(direct_f1(&["x", "X."], &users(&[&["x"], &["z"]])), 2.0 / 3.0);
        assert_eq!(direct_f1(&["q"], &users(&[&["x"]])), 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(direct_f1(&empty, &users(&[&["x"]])), 0.0);
    }

    #[test]
    fn overlapping_users_form_one_group() {
        let u = users(&[&["NYC", "New York"], &["new york"], &["Boston"]]);
        assert_eq!(direct_f1(&["New York", "Boston"], &u), 1.0);
    }

    #[test]
    fn one_prediction_cannot_match_two_groups() {
        let u = users(&[&["a", "b"], &["c"]]);
        assert_eq!(direct_f1(&["a"], &u), 2.0 * 1.0 * 0.5 / 1.5);
    }
}
