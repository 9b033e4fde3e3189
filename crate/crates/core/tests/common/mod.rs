//! Brute-force oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clarify_core::dataset::{QueryRecord, UserIntent};
use clarify_core::prefs::CandidateKind;
use rand::Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e")
}

pub fn clarify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clarify"))
        .args(args)
        .current_dir(fixture_dir())
        .output()
        .expect("spawn clarify")
}

pub fn query(id: &str, question: &str, golds: &[&[&str]], ambiguous: bool) -> QueryRecord {
    QueryRecord {
        id: id.into(),
        question: question.into(),
        users: golds.iter().map(|aliases| UserIntent::new(aliases.iter().copied())).collect(),
        ambiguous: Some(ambiguous),
        split_tag: None,
    }
}

/// Lowercase, drop articles, squeeze spaces. Only valid for the
/// punctuation-free strings produced by `random_instance`.
fn norm(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Components of the "shares a normalized alias" relation, by repeated sweeps.
fn groups(users: &[Vec<String>]) -> Vec<BTreeSet<String>> {
    let mut sets: Vec<BTreeSet<String>> = users.iter().map(|u| u.iter().map(|a| norm(a)).collect()).collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if !sets[i].is_disjoint(&sets[j]) {
                    let other = sets.remove(j);
                    sets[i].extend(other);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return sets;
        }
    }
}

/// Largest matching by trying every assignment of predictions to groups.
fn best(preds: &[String], groups: &[BTreeSet<String>], used: &mut Vec<bool>) -> usize {
    let Some((first, rest)) = preds.split_first() else {
        return 0;
    };
    let mut top = best(rest, groups, used);
    for g in 0..groups.len() {
        if !used[g] && groups[g].contains(first) {
            used[g] = true;
            top = top.max(1 + best(rest, groups, used));
            used[g] = false;
        }
    }
    top
}

pub fn oracle_direct_f1(preds: &[String], users: &[Vec<String>]) -> f64 {
    let mut dedup: Vec<String> = Vec::new();
    for p in preds {
        let n = norm(p);
        if !dedup.contains(&n) {
            dedup.push(n);
        }
    }
    let gs = groups(users);
    if dedup.is_empty() || gs.is_empty() {
        return 0.0;
    }
    let m = best(&dedup, &gs, &mut vec![false; gs.len()]);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / dedup.len() as f64;
    let r = m as f64 / gs.len() as f64;
    2.0 * p * r / (p + r)
}

const WORDS: &[&str] = &["paris", "Rome", "the oslo", "Lima", "an oslo", "PARIS", "kyiv"];

fn phrase<R: Rng>(rng: &mut R) -> String {
    WORDS[rng.random_range(0..WORDS.len())].to_owned()
}

/// `|R|, k <= 6`, drawn from a small vocabulary so collisions are common.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<String>, Vec<Vec<String>>) {
    let n_preds = rng.random_range(0..=6);
    let k = rng.random_range(1..=6);
    let preds = (0..n_preds).map(|_| phrase(rng)).collect();
    let users = (0..k)
        .map(|_| (0..rng.random_range(1..=2)).map(|_| phrase(rng)).collect())
        .collect();
    (preds, users)
}

/// Ranking by plain sort: score descending, direct before clarify, then index.
/// Returns `(score, kind, members)` runs.
pub fn oracle_rank(items: &[(CandidateKind, f64)]) -> Vec<(f64, CandidateKind, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let kind_key = |k: CandidateKind| if k == CandidateKind::Direct { 0 } else { 1 };
    idx.sort_by(|&a, &b| {
        items[b]
            .1
            .partial_cmp(&items[a].1)
            .unwrap()
            .then(kind_key(items[a].0).cmp(&kind_key(items[b].0)))
            .then(a.cmp(&b))
    });
    let mut out: Vec<(f64, CandidateKind, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((s, k, m)) if *s == items[i].1 && *k == items[i].0 => m.push(i),
            _ => out.push((items[i].1, items[i].0, vec![i])),
        }
    }
    out
}

/// Every ordered pair the preference rule admits.
pub fn oracle_pairs(items: &[(CandidateKind, f64)]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, a) in items.iter().enumerate() {
        for (j, b) in items.iter().enumerate() {
            let wins = a.1 > b.1 || (a.1 == b.1 && a.0 == CandidateKind::Direct && b.0 == CandidateKind::Clarify);
            if wins {
                out.insert((i, j));
            }
        }
    }
    out
}

pub fn random_scored<R: Rng>(rng: &mut R) -> Vec<(CandidateKind, f64)> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            let kind = if rng.random_bool(0.3) {
                CandidateKind::Direct
            } else {
                CandidateKind::Clarify
            };
            (kind, f64::from(rng.random_range(0..=4u8)) / 4.0)
        })
        .collect()
}

/// Loss by direct evaluation of `-ln sigmoid(margin)`.
pub fn naive_dpo(theta_p: f64, ref_p: f64, theta_r: f64, ref_r: f64, beta: f64) -> f64 {
    let z = beta * ((theta_p - ref_p) - (theta_r - ref_r));
    -(1.0 / (1.0 + (-z).exp())).ln()
}
