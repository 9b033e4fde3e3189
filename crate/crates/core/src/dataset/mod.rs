//! Query datasets: the record model, validation, loaders for the native line
//! format and the NQ-Open / AmbigQA source formats, and split statistics.

mod adapters;
pub mod lines;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::normalize_answer;

pub use lines::{encode_line, read_records, read_single, write_records, LineError, Versioned, SCHEMA_VERSION};

/// One simulated user: an optional disambiguated intent and the acceptable
/// surface forms of the answer that user expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserIntent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_text: Option<String>,
    pub answers: Vec<String>,
}

impl UserIntent {
    pub fn new<S: Into<String>>(answers: impl IntoIterator<Item = S>) -> Self {
        Self {
            intent_text: None,
            answers: answers.into_iter().map(Into::into).collect(),
        }
    }

    /// The alias shown to the user simulator as "the" expected answer.
    pub fn primary_answer(&self) -> &str {
        &self.answers[0]
    }
}

/// An input query together with its `k` simulated users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub users: Vec<UserIntent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

impl QueryRecord {
    pub fn k(&self) -> usize {
        self.users.len()
    }

    /// Check the record invariants, returning `(field, message)` on failure.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.id.trim().is_empty() {
            return Err(("id".into(), "empty id".into()));
        }
        if self.question.trim().is_empty() {
            return Err(("question".into(), "empty question".into()));
        }
        if self.users.is_empty() {
            return Err(("users".into(), "empty user list".into()));
        }
        for (i, user) in self.users.iter().enumerate() {
            if user.answers.is_empty() {
                return Err((format!("users[{i}].answers"), "empty answer list".into()));
            }
            if let Some(j) = user.answers.iter().position(|a| a.trim().is_empty()) {
                return Err((format!("users[{i}].answers[{j}]"), "blank answer alias".into()));
            }
        }
        if self.ambiguous == Some(false) {
            let groups = reference_groups(&self.users).len();
            if groups != 1 {
                return Err((
                    "users".into(),
                    format!("unambiguous record has {groups} reference groups, expected 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Partition users into reference groups: users whose alias sets share a
/// normalized form end up in the same group (transitively). Groups are listed
/// in order of their first member; members are ascending user indices.
pub fn reference_groups(users: &[UserIntent]) -> Vec<Vec<usize>> {
    let norms: Vec<HashSet<String>> = users
        .iter()
        .map(|u| u.answers.iter().map(|a| normalize_answer(a)).collect())
        .collect();
    let mut parent: Vec<usize> = (0..users.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..users.len() {
        for j in (i + 1)..users.len() {
            if !norms[i].is_disjoint(&norms[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group: Vec<Option<usize>> = vec![None; users.len()];
    for i in 0..users.len() {
        let root = find(&mut parent, i);
        match root_to_group[root] {
            Some(g) => groups[g].push(i),
            None => {
                root_to_group[root] = Some(groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Source format of a query file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySchema {
    /// `{question, answer: [...]}`, one answer per annotator.
    NqOpen,
    /// `{id, question, annotations: [...]}`.
    AmbigQa,
    /// This crate's own versioned record.
    Native,
}

impl FromStr for QuerySchema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nq-open" => Ok(Self::NqOpen),
            "ambigqa" => Ok(Self::AmbigQa),
            "native" => Ok(Self::Native),
            other => Err(format!("unknown schema `{other}` (expected nq-open, ambigqa or native)")),
        }
    }
}

impl fmt::Display for QuerySchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NqOpen => "nq-open",
            Self::AmbigQa => "ambigqa",
            Self::Native => "native",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Line {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl DatasetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Io { .. } => None,
            Self::Line { line, .. } | Self::DuplicateId { line, .. } => Some(*line),
        }
    }
}

/// Result of a lenient load: every input line is either a record or an error.
#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub records: Vec<QueryRecord>,
    pub errors: Vec<DatasetError>,
}

fn parse_line(schema: QuerySchema, text: &str, line: usize) -> Result<QueryRecord, DatasetError> {
    let to_err = |(field, message): (String, String)| DatasetError::Line {
        line,
        field,
        message,
    };
    let record = match schema {
        QuerySchema::Native => lines::decode_line::<QueryRecord>(text).map_err(to_err)?,
        QuerySchema::NqOpen => adapters::nq_open(text, line).map_err(to_err)?,
        QuerySchema::AmbigQa => adapters::ambigqa(text).map_err(to_err)?,
    };
    record.validate().map_err(to_err)?;
    Ok(record)
}

/// Parse `text` line by line, collecting records and per-line errors.
/// `records.len() + errors.len()` always equals the number of lines.
pub fn parse_queries_lenient(text: &str, schema: QuerySchema) -> LoadOutcome {
    let mut outcome = LoadOutcome::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        match parse_line(schema, raw, line) {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    outcome.records.push(record);
                } else {
                    outcome.errors.push(DatasetError::DuplicateId {
                        line,
                        id: record.id,
                    });
                }
            }
            Err(e) => outcome.errors.push(e),
        }
    }
    outcome
}

/// Lenient file load; only I/O failure is a hard error.
pub fn load_queries_lenient(path: &Path, schema: QuerySchema) -> Result<LoadOutcome, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(parse_queries_lenient(&text, schema))
}

/// Load every record in `path`, failing on the first bad line.
pub fn load_queries(path: &Path, schema: QuerySchema) -> Result<Vec<QueryRecord>, DatasetError> {
    let mut outcome = load_queries_lenient(path, schema)?;
    if outcome.errors.is_empty() {
        Ok(outcome.records)
    } else {
        outcome.errors.sort_by_key(|e| e.line());
        Err(outcome.errors.remove(0))
    }
}

/// Counts of ambiguous and unambiguous queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    /// `unambiguous + ambiguous`; unlabeled records are excluded.
    pub total: usize,
    pub unambiguous: usize,
    pub ambiguous: usize,
    pub unlabeled: usize,
    /// Mean `k` over ambiguous records, 0 when there are none.
    pub mean_answers_ambiguous: f64,
}

pub fn split_counts(records: &[QueryRecord]) -> SplitStats {
    let mut stats = SplitStats {
        total: 0,
        unambiguous: 0,
        ambiguous: 0,
        unlabeled: 0,
        mean_answers_ambiguous: 0.0,
    };
    let mut ambiguous_k = 0usize;
    for r in records {
        match r.ambiguous {
            Some(true) => {
                stats.ambiguous += 1;
                ambiguous_k += r.k();
            }
            Some(false) => stats.unambiguous += 1,
            None => stats.unlabeled += 1,
        }
    }
    stats.total = stats.ambiguous + stats.unambiguous;
    if stats.ambiguous > 0 {
        stats.mean_answers_ambiguous = ambiguous_k as f64 / stats.ambiguous as f64;
    }
    stats
}
