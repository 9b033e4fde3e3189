//! Answer normalization and exact match.
//!
//! Every module that compares answers (scoring, leakage filtering, dedup of
//! candidates and feasible answers) goes through [`normalize_answer`], so the
//! rules live in exactly one place.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        c.is_ascii_punctuation()
    } else {
        !c.is_alphanumeric() && !c.is_whitespace()
    }
}

/// Lowercase, strip punctuation, drop standalone articles, collapse
/// whitespace.
///
/// Non-ASCII characters that are neither alphanumeric nor whitespace (dashes,
/// curly quotes, currency signs) count as punctuation.
pub fn normalize_answer(s: &str) -> String {
    let stripped: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !is_punctuation(*c))
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for token in stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Normalized whitespace tokens of `s`.
pub fn normalized_tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True iff `pred` equals any alias after normalization.
pub fn exact_match<S: AsRef<str>>(pred: &str, gold_aliases: &[S]) -> bool {
    let pred = normalize_answer(pred);
    gold_aliases
        .iter()
        .any(|g| normalize_answer(g.as_ref()) == pred)
}
