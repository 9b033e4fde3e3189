use serde::{Deserialize, Serialize};

use super::{PromptError, CLARIFY_PREFIX};
use crate::engine::Decision;
use crate::metrics::normalize_answer;

/// One clarifying answer paired with the feasible answer it selects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftGenPair {
    pub clarifying_answer: String,
    /// Canonical surface form from the input answer list.
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SftGenParse {
    /// The oracle judged that at most one response is correct.
    None,
    Clarify {
        clarifying_question: String,
        pairs: Vec<SftGenPair>,
        /// Pairs discarded as incomplete, duplicated, or not matching any input answer.
        dropped: usize,
    },
}

impl SftGenParse {
    pub fn is_none(&self) -> bool {
        matches!(self, SftGenParse::None)
    }
}

/// Structured oracle output, renderable in the format the SFT-gen prompt asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftGenOutput {
    pub clarifying_question: String,
    pub pairs: Vec<(String, String)>,
}

impl SftGenOutput {
    pub fn render(&self) -> String {
        let mut out = format!("{CLARIFY_PREFIX} {}", self.clarifying_question);
        for (i, (a, r)) in self.pairs.iter().enumerate() {
            out.push_str(&format!("\n{n}. Clarifying Answer: {a}\n{n}. Response: {r}", n = i + 1));
        }
        out
    }
}

fn is_abstain_marker(value: &str) -> bool {
    let v = value.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("none.")
}

/// Match `"<n>. <label>: value"`.
fn numbered_field<'a>(line: &'a str, label: &str) -> Option<(usize, &'a str)> {
    let digits_end = line.find(|c: char| !c.is_ascii_digit()).unwrap_or(line.len());
    if digits_end == 0 {
        return None;
    }
    let n: usize = line[..digits_end].parse().ok()?;
    let rest = line[digits_end..].strip_prefix('.')?.trim_start();
    let value = rest.strip_prefix(label)?.strip_prefix(':')?;
    Some((n, value.trim()))
}

/// Parse the oracle's reply to the SFT-gen prompt against the answers it was shown.
pub fn parse_sft_gen_output<S: AsRef<str>>(raw: &str, answers: &[S]) -> Result<SftGenParse, PromptError> {
    let parse_err = |reason: &str| PromptError::Parse {
        reason: reason.to_owned(),
        raw: raw.to_owned(),
    };
    if is_abstain_marker(raw) {
        return Ok(SftGenParse::None);
    }
    let mut question: Option<String> = None;
    let mut slots: Vec<(usize, Option<String>, Option<String>)> = Vec::new();
    let mut slot_updates: Vec<(usize, bool, String)> = Vec::new();
    for line in raw.lines().map(str::trim) {
        if let Some(q) = line.strip_prefix(CLARIFY_PREFIX) {
            if question.is_none() {
                question = Some(q.trim().to_owned());
            }
        } else if let Some((n, a)) = numbered_field(line, "Clarifying Answer") {
            slot_updates.push((n, true, a.to_owned()));
        } else if let Some((n, r)) = numbered_field(line, "Response") {
            slot_updates.push((n, false, r.to_owned()));
        }
    }
    for (n, is_answer, value) in slot_updates {
        let i = match slots.iter().position(|s| s.0 == n) {
            Some(i) => i,
            None => {
                slots.push((n, None, None));
                slots.len() - 1
            }
        };
        let field = if is_answer { &mut slots[i].1 } else { &mut slots[i].2 };
        field.get_or_insert(value);
    }
    let question = match question {
        Some(q) if !q.is_empty() => q,
        Some(_) => return Err(parse_err("empty clarifying question")),
        None => return Err(parse_err("missing `Clarifying Question:` header")),
    };
    if slots.is_empty() {
        return Err(parse_err("no numbered clarifying answer pairs"));
    }
    slots.sort_by_key(|s| s.0);

    let normalized: Vec<String> = answers.iter().map(|a| normalize_answer(a.as_ref())).collect();
    let mut used = vec![false; answers.len()];
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for (_, a, r) in slots {
        let (Some(a), Some(r)) = (a, r) else {
            dropped += 1;
            continue;
        };
        let target = normalize_answer(&r);
        match normalized.iter().position(|n| *n == target) {
            Some(j) if !used[j] && !a.is_empty() => {
                used[j] = true;
                pairs.push(SftGenPair {
                    clarifying_answer: a,
                    response: answers[j].as_ref().to_owned(),
                });
            }
            _ => dropped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(PromptError::NoMatchedPairs { dropped });
    }
    if dropped > 0 {
        tracing::warn!(dropped, "dropped clarifying pairs that matched no feasible answer");
    }
    Ok(SftGenParse::Clarify {
        clarifying_question: question,
        pairs,
        dropped,
    })
}

/// Parsed value for one user slot of the user-simulator reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimSlot {
    Answer(String),
    /// The simulator wrote the abstain marker.
    Abstain,
    /// No line for this index.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSimParse {
    /// Index `i` holds user `i + 1`.
    pub slots: Vec<SimSlot>,
}

/// Parse `Clarifying Answer i: ...` lines for users `1..=n_users`.
pub fn parse_user_sim_output(raw: &str, n_users: usize) -> Result<UserSimParse, PromptError> {
    let mut slots = vec![SimSlot::Missing; n_users];
    let mut recognized = false;
    for line in raw.lines().map(str::trim) {
        let Some(rest) = line.strip_prefix("Clarifying Answer") else {
            continue;
        };
        let rest = rest.trim_start();
        let digits_end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        let Ok(n) = rest[..digits_end].parse::<usize>() else {
            continue;
        };
        let Some(value) = rest[digits_end..].trim_start().strip_prefix(':') else {
            continue;
        };
        if n == 0 || n > n_users {
            continue;
        }
        recognized = true;
        let slot = &mut slots[n - 1];
        if *slot != SimSlot::Missing {
            continue;
        }
        let value = value.trim();
        *slot = if is_abstain_marker(value) {
            SimSlot::Abstain
        } else if value.is_empty() {
            SimSlot::Missing
        } else {
            SimSlot::Answer(value.to_owned())
        };
    }
    if !recognized {
        return Err(PromptError::Parse {
            reason: "no `Clarifying Answer i:` lines".into(),
            raw: raw.to_owned(),
        });
    }
    Ok(UserSimParse { slots })
}

/// Read the final `Decision: clarify|answer` line of a proactive-decider reply.
pub fn parse_procot_decision(raw: &str) -> Result<Decision, PromptError> {
    for line in raw.lines().rev() {
        let line = line.trim();
        let lower = line.to_ascii_lowercase();
        let Some(pos) = lower.find("decision:") else {
            continue;
        };
        let value = lower[pos + "decision:".len()..]
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric());
        return match value {
            "clarify" => Ok(Decision::Clarify),
            "answer" | "direct" => Ok(Decision::Direct),
            _ => Err(PromptError::Parse {
                reason: format!("unknown decision {value:?}"),
                raw: raw.to_owned(),
            }),
        };
    }
    Err(PromptError::Parse {
        reason: "no `Decision:` line".into(),
        raw: raw.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const OLYMPICS: &str = "Clarifying Question: Are you asking about the ancient Olympic Games or the modern Olympic Games?
1. Clarifying Answer: Ancient Olympic Games
1. Response: Olympia
2. Clarifying Answer: Modern Olympic Games
2. Response: Athens";

    #[test]
    fn well_formed_two_pairs() {
        let p = parse_sft_gen_output(OLYMPICS, &["Olympia", "Athens"]).unwrap();
        let SftGenParse::Clarify { clarifying_question, pairs, dropped } = p else {
            panic!("expected pairs")
        };
        assert!(clarifying_question.starts_with("Are you asking about the ancient"));
        assert_eq!(dropped, 0);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].clarifying_answer, "Modern Olympic Games");
        assert_eq!(pairs[1].response, "Athens");
    }

    #[test]
    fn none_spellings() {
        for raw in ["None", "None.", " none ", "\"None\"", "NONE."] {
            assert!(parse_sft_gen_output(raw, &["a", "b"]).unwrap().is_none(), "{raw}");
        }
    }

    #[test]
    fn missing_header_is_an_error() {
        let raw = "1. Clarifying Answer: x\n1. Response: a";
        assert!(matches!(parse_sft_gen_output(raw, &["a", "b"]), Err(PromptError::Parse { .. })));
        assert!(matches!(parse_sft_gen_output("Paris", &["a", "b"]), Err(PromptError::Parse { .. })));
    }

    #[test]
    fn unmatched_responses_are_dropped() {
        let raw = "Clarifying Question: Which?\n1. Clarifying Answer: first\n1. Response: The Alpha.\n2. Clarifying Answer: second\n2. Response: zeta\n3. Clarifying Answer: third";
        let p = parse_sft_gen_output(raw, &["alpha", "beta", "gamma"]).unwrap();
        assert_eq!(
            p,
            SftGenParse::Clarify {
                clarifying_question: "Which?".into(),
                pairs: vec![SftGenPair {
                    clarifying_answer: "first".into(),
                    response: "alpha".into()
                }],
                dropped: 2,
            }
        );
        let raw = "Clarifying Question: Which?\n1. Clarifying Answer: x\n1. Response: nope";
        assert_eq!(parse_sft_gen_output(raw, &["a", "b"]), Err(PromptError::NoMatchedPairs { dropped: 1 }));
    }

    #[test]
    fn user_sim_values_and_abstain() {
        let raw = "Clarifying Answer 1: Ancient Olympic Games\nClarifying Answer 2: Modern Olympic Games";
        assert_eq!(
            parse_user_sim_output(raw, 2).unwrap().slots,
            vec![
                SimSlot::Answer("Ancient Olympic Games".into()),
                SimSlot::Answer("Modern Olympic Games".into())
            ]
        );
        assert_eq!(parse_user_sim_output("Clarifying Answer 1: None.", 1).unwrap().slots, vec![SimSlot::Abstain]);
        assert_eq!(
            parse_user_sim_output("Clarifying Answer 2: the later one", 2).unwrap().slots,
            vec![SimSlot::Missing, SimSlot::Answer("the later one".into())]
        );
        assert!(parse_user_sim_output("I don't know", 2).is_err());
        assert!(parse_user_sim_output("Clarifying Answer 5: x", 2).is_err());
    }

    #[test]
    fn procot_decision_line() {
        assert_eq!(parse_procot_decision("It is ambiguous.\nDecision: clarify").unwrap(), Decision::Clarify);
        assert_eq!(parse_procot_decision("Decision: clarify\nDecision: Answer.").unwrap(), Decision::Direct);
        assert!(parse_procot_decision("no idea").is_err());
        assert!(parse_procot_decision("Decision: maybe").is_err());
    }

    fn line_text() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 ,?']{0,24}".prop_map(|s| s.trim().to_owned())
    }

    proptest! {
        #[test]
        fn sft_gen_round_trip(
            q in line_text(),
            pairs in proptest::collection::vec((line_text(), line_text()), 1..6),
        ) {
            let answers: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
            let norms: std::collections::HashSet<String> = answers.iter().map(|a| normalize_answer(a)).collect();
            prop_assume!(norms.len() == answers.len() && !norms.contains(""));
            prop_assume!(!q.is_empty() && pairs.iter().all(|p| !p.0.is_empty()) && !is_abstain_marker(&q));
            let out = SftGenOutput { clarifying_question: q.clone(), pairs: pairs.clone() };
            let parsed = parse_sft_gen_output(&out.render(), &answers).unwrap();
            let expected = SftGenParse::Clarify {
                clarifying_question: q,
                pairs: pairs.into_iter().map(|(a, r)| SftGenPair { clarifying_answer: a, response: r }).collect(),
                dropped: 0,
            };
            prop_assert_eq!(parsed, expected);
        }

        #[test]
        fn parsers_are_total(raw in "(?s).{0,200}", n in 0usize..6) {
            let _ = parse_sft_gen_output(&raw, &["a", "b"]);
            let _ = parse_user_sim_output(&raw, n);
            let _ = parse_procot_decision(&raw);
        }

        #[test]
        fn parsers_are_total_on_structured_noise(
            lines in proptest::collection::vec(
                prop_oneof![
                    Just("Clarifying Question:".to_owned()),
                    "[0-9]{1,2}\\. Clarifying Answer: ?[a-z]{0,5}",
                    "[0-9]{1,2}\\. Response: ?[a-z]{0,5}",
                    "Clarifying Answer [0-9]{0,2}:? ?[a-zN.]{0,6}",
                    "Decision: ?[a-z]{0,8}",
                ],
                0..8,
            ),
            n in 0usize..4,
        ) {
            let raw = lines.join("\n");
            let _ = parse_sft_gen_output(&raw, &["a", "b", "c"]);
            if let Ok(p) = parse_user_sim_output(&raw, n) {
                prop_assert_eq!(p.slots.len(), n);
            }
            let _ = parse_procot_decision(&raw);
        }
    }
}
