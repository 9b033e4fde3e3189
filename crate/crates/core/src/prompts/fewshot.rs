use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::dataset::QueryRecord;
use crate::metrics::normalize_answer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub answer: String,
}

impl Exemplar {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

fn same_question(a: &str, b: &str) -> bool {
    a.trim() == b.trim() || normalize_answer(a) == normalize_answer(b)
}

/// `n_shots` Q/A blocks followed by the target question with an open answer slot.
///
/// Exemplars whose question matches the target are skipped; the first
/// `n_shots` of the remainder are used in order.
pub fn render_fewshot_qa(question: &str, exemplars: &[Exemplar], n_shots: usize) -> Result<String, PromptError> {
    let usable: Vec<&Exemplar> = exemplars
        .iter()
        .filter(|e| !same_question(&e.question, question))
        .collect();
    if usable.len() < n_shots {
        return Err(PromptError::PoolTooSmall {
            needed: n_shots,
            available: usable.len(),
        });
    }
    let mut out = String::new();
    for e in &usable[..n_shots] {
        out.push_str(&format!("Question: {}\nAnswer: {}\n\n", e.question, e.answer));
    }
    out.push_str(&format!("Question: {question}\nAnswer:"));
    Ok(out)
}

/// Exemplar pool for few-shot prompting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FewShotPool {
    exemplars: Vec<Exemplar>,
}

impl FewShotPool {
    pub fn new(exemplars: Vec<Exemplar>) -> Self {
        Self { exemplars }
    }

    /// One exemplar per query: its question and first user's first alias.
    pub fn from_queries(queries: &[QueryRecord]) -> Self {
        Self::new(
            queries
                .iter()
                .map(|q| Exemplar::new(q.question.clone(), q.users[0].primary_answer()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Draw `n_shots` distinct exemplars, excluding any matching `target`.
    pub fn draw<R: Rng + ?Sized>(&self, target: &str, n_shots: usize, rng: &mut R) -> Result<Vec<Exemplar>, PromptError> {
        let usable: Vec<&Exemplar> = self
            .exemplars
            .iter()
            .filter(|e| !same_question(&e.question, target))
            .collect();
        if usable.len() < n_shots {
            return Err(PromptError::PoolTooSmall {
                needed: n_shots,
                available: usable.len(),
            });
        }
        Ok(sample(rng, usable.len(), n_shots)
            .into_iter()
            .map(|i| usable[i].clone())
            .collect())
    }
}
