//! Run the four-turn protocol against a scripted backend and score the run.
//!
//! ```bash
//! cargo run -p clarify-core --example simulate_dialogue
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use clarify_core::dataset::{QueryRecord, UserIntent};
use clarify_core::engine::{run_episodes, EngineConfig};
use clarify_core::gateway::{Gateway, MockBackend, MockEntry};
use clarify_core::metrics::{decision_accuracies, evaluate, render_table};

fn query(id: &str, question: &str, answers: &[&str], ambiguous: bool) -> QueryRecord {
    QueryRecord {
        id: id.into(),
        question: question.into(),
        users: answers.iter().map(|a| UserIntent::new([*a])).collect(),
        ambiguous: Some(ambiguous),
        split_tag: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let queries = vec![
        query("capital", "what is the capital of france", &["Paris"], false),
        query(
            "starbucks",
            "how many starbucks are there around the world",
            &["28,218", "4,962", "23,768"],
            true,
        ),
    ];

    // Entries are tried in order; turn-4 prompts also contain the turn-2 text.
    let mock = Arc::new(MockBackend::new(vec![
        MockEntry::complete("Clarifying Answer: As of 2018.\nAnswer:", "28,218"),
        MockEntry::complete("Clarifying Answer: As of 2005.\nAnswer:", "6,000"),
        MockEntry::complete("Clarifying Answer: As of 2016.\nAnswer:", "23,768"),
        MockEntry::complete(
            "Pretend",
            "Clarifying Answer 1: As of 2018.\nClarifying Answer 2: As of 2005.\nClarifying Answer 3: As of 2016.",
        ),
        MockEntry::complete("Question: what is the capital of france\nResponse:", " Paris"),
        MockEntry::complete("Question: how many starbucks", " Clarifying Question: As of which year?"),
    ]));
    let mut gateway = Gateway::new();
    gateway.register("scripted", mock.clone());

    let cfg = EngineConfig::new("scripted", "scripted", "scripted");
    let episodes = run_episodes(&gateway, &cfg, &queries, None, 2)?;

    for ep in &episodes {
        println!("== {} ({} model turns)", ep.query_id, ep.model_turns);
        println!("   assistant: {}", ep.initial_response);
        for turn in ep.per_user.iter().flatten() {
            let said = turn.clarifying_answer.value.as_deref().unwrap_or("<abstain>");
            let final_answer = turn.final_answer.as_deref().unwrap_or("-");
            println!("   user {} says {said:?} -> {final_answer}", turn.user_index);
        }
        if let Some(direct) = &ep.direct_answers {
            println!("   direct: {direct:?}");
        }
    }

    let report = evaluate(&episodes, &queries)?;
    // Greedy answers feed the decision accuracies.
    let greedy: HashMap<String, String> = [("capital", "Paris"), ("starbucks", "30,000")]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
    let decisions = decision_accuracies(&episodes, &queries, &greedy)?;
    println!();
    print!("{}", render_table(&[("scripted".into(), report, Some(decisions))]));
    println!("backend calls: {}", mock.call_count());
    Ok(())
}
