//! Source-format adapters. Field mapping is listed in the workspace README.

use serde::Deserialize;
use serde_json::Value;

use super::{reference_groups, QueryRecord, UserIntent};

fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, (String, String)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<record>".to_owned() } else { path };
        (field, e.into_inner().to_string())
    })
}

fn id_from(value: Option<Value>, fallback: String) -> Result<String, (String, String)> {
    match value {
        None | Some(Value::Null) => Ok(fallback),
        Some(Value::String(s)) => Ok(s),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(("id".into(), format!("expected string or number, got {other}"))),
    }
}

fn push_unique(out: &mut Vec<String>, alias: &str) {
    if !out.iter().any(|a| a == alias) {
        out.push(alias.to_owned());
    }
}

/// Merge users whose alias sets overlap (union of aliases, first intent wins).
fn merge_overlapping(users: Vec<UserIntent>) -> Vec<UserIntent> {
    reference_groups(&users)
        .into_iter()
        .map(|group| {
            let mut merged = UserIntent {
                intent_text: users[group[0]].intent_text.clone(),
                answers: Vec::new(),
            };
            for &i in &group {
                for alias in &users[i].answers {
                    push_unique(&mut merged.answers, alias);
                }
            }
            merged
        })
        .collect()
}

#[derive(Deserialize)]
struct NqOpenLine {
    #[serde(default)]
    id: Option<Value>,
    question: String,
    answer: Vec<String>,
}

/// NQ-Open: each entry of `answer` is one annotator, hence one user. Users
/// with identical normalized answers are merged; no ambiguity label.
pub(super) fn nq_open(text: &str, line: usize) -> Result<QueryRecord, (String, String)> {
    let raw: NqOpenLine = decode(text)?;
    let users = raw
        .answer
        .iter()
        .map(|a| UserIntent::new([a.as_str()]))
        .collect();
    Ok(QueryRecord {
        id: id_from(raw.id, format!("nq-{line}"))?,
        question: raw.question,
        users: merge_overlapping(users),
        ambiguous: None,
        split_tag: None,
    })
}

#[derive(Deserialize)]
struct AmbigQaLine {
    id: Value,
    question: String,
    annotations: Vec<AmbigAnnotation>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum AmbigAnnotation {
    #[serde(rename = "singleAnswer")]
    Single { answer: Vec<String> },
    #[serde(rename = "multipleQAs", rename_all = "camelCase")]
    Multiple { qa_pairs: Vec<AmbigQaPair> },
}

#[derive(Deserialize)]
struct AmbigQaPair {
    question: String,
    answer: Vec<String>,
}

/// AmbigQA: a question is ambiguous iff any annotator produced `multipleQAs`.
/// Ambiguous questions get one user per disambiguated QA pair (pairs with
/// overlapping answers merged); unambiguous questions get a single user whose
/// aliases are the union of every `singleAnswer`.
pub(super) fn ambigqa(text: &str) -> Result<QueryRecord, (String, String)> {
    let raw: AmbigQaLine = decode(text)?;
    let id = id_from(Some(raw.id), String::new())?;
    let mut pairs = Vec::new();
    let mut single = Vec::new();
    for ann in raw.annotations {
        match ann {
            AmbigAnnotation::Single { answer } => {
                for a in &answer {
                    push_unique(&mut single, a);
                }
            }
            AmbigAnnotation::Multiple { qa_pairs } => pairs.extend(qa_pairs),
        }
    }
    let (users, ambiguous) = if pairs.is_empty() {
        (vec![UserIntent::new(single)], false)
    } else {
        let users = pairs
            .into_iter()
            .map(|p| UserIntent {
                intent_text: Some(p.question),
                answers: p.answer,
            })
            .collect();
        (merge_overlapping(users), true)
    };
    Ok(QueryRecord {
        id,
        question: raw.question,
        users: users.into_iter().filter(|u| !u.answers.is_empty()).collect(),
        ambiguous: Some(ambiguous),
        split_tag: None,
    })
}
