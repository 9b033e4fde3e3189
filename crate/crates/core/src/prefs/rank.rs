//! Ranking of scored candidates and preference-pair emission.

use serde::{Deserialize, Serialize};

use super::{CandidateKind, CandidateResponse, PrefError, Ranker};

/// Candidates of one kind sharing one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieGroup {
    pub score: f64,
    pub kind: CandidateKind,
    /// Candidate indices, ascending.
    pub members: Vec<usize>,
}

/// Groups by descending score; at equal score the direct group comes first.
pub fn rank_scored(items: &[(CandidateKind, f64)]) -> Vec<TieGroup> {
    let mut levels: Vec<f64> = items.iter().map(|i| i.1).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut groups = Vec::new();
    for score in levels {
        for kind in [CandidateKind::Direct, CandidateKind::Clarify] {
            let members: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(_, it)| it.0 == kind && it.1 == score)
                .map(|(i, _)| i)
                .collect();
            if !members.is_empty() {
                groups.push(TieGroup { score, kind, members });
            }
        }
    }
    groups
}

/// Rank candidates by their `ranker` score.
pub fn aggregate_rank(candidates: &[CandidateResponse], ranker: Ranker) -> Result<Vec<TieGroup>, PrefError> {
    let items = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| match c.scores.get(&ranker) {
            Some(s) if s.is_finite() => Ok((c.kind, *s)),
            Some(_) => Err(PrefError::NonFiniteScore { index: i }),
            None => Err(PrefError::MissingScore { index: i, ranker }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_scored(&items))
}

/// Ordered (winner, loser) index pairs implied by a ranking.
///
/// A group beats every later group with a lower score, and a direct group
/// beats the clarify group at its own score. Same-kind ties yield nothing.
/// Winners follow rank order; each winner's losers follow candidate order.
pub fn preference_pairs(ranking: &[TieGroup]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (gi, g) in ranking.iter().enumerate() {
        let beaten = |h: &TieGroup| h.score < g.score || (h.score == g.score && g.kind == CandidateKind::Direct && h.kind == CandidateKind::Clarify);
        let mut losers: Vec<usize> = ranking[gi + 1..]
            .iter()
            .filter(|h| beaten(h))
            .flat_map(|h| h.members.iter().copied())
            .collect();
        losers.sort_unstable();
        for &w in &g.members {
            pairs.extend(losers.iter().map(|&l| (w, l)));
        }
    }
    pairs
}

/// One preference pair, the unit of DPO training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub query_id: String,
    /// Serialized user turn `h`.
    pub prompt: String,
    pub preferred: ResponseRef,
    pub rejected: ResponseRef,
    pub ranker: Ranker,
    pub score_preferred: f64,
    pub score_rejected: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRef {
    pub kind: CandidateKind,
    pub text: String,
}

impl From<&CandidateResponse> for ResponseRef {
    fn from(c: &CandidateResponse) -> Self {
        Self {
            kind: c.kind,
            text: c.text.clone(),
        }
    }
}

pub fn emit_pairs(
    ranking: &[TieGroup],
    candidates: &[CandidateResponse],
    query_id: &str,
    prompt: &str,
    ranker: Ranker,
) -> Vec<PreferenceRecord> {
    preference_pairs(ranking)
        .into_iter()
        .map(|(w, l)| PreferenceRecord {
            query_id: query_id.to_owned(),
            prompt: prompt.to_owned(),
            preferred: (&candidates[w]).into(),
            rejected: (&candidates[l]).into(),
            ranker,
            score_preferred: candidates[w].scores[&ranker],
            score_rejected: candidates[l].scores[&ranker],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use CandidateKind::{Clarify, Direct};

    #[test]
    fn tie_rule() {
        let r = rank_scored(&[(Clarify, 0.5), (Direct, 0.5)]);
        assert_eq!(r.iter().map(|g| g.members.clone()).collect::<Vec<_>>(), vec![vec![1], vec![0]]);
        let r = rank_scored(&[(Direct, 0.5), (Clarify, 1.0)]);
        assert_eq!(r[0].members, vec![1]);
        let r = rank_scored(&[(Clarify, 0.5), (Clarify, 0.5)]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].members, vec![0, 1]);
    }

    #[test]
    fn pair_rules() {
        let r = rank_scored(&[(Clarify, 1.0), (Clarify, 0.5), (Direct, 0.5)]);
        assert_eq!(preference_pairs(&r), vec![(0, 1), (0, 2), (2, 1)]);
        assert!(preference_pairs(&rank_scored(&[(Clarify, 0.3); 4])).is_empty());
        let r = rank_scored(&[(Clarify, 1.0), (Clarify, 0.0), (Clarify, 1.0), (Clarify, 0.0)]);
        assert_eq!(preference_pairs(&r), vec![(0, 1), (0, 3), (2, 1), (2, 3)]);
    }
}
