//! Build feasible answer sets (annotated and model-sampled), prompt an oracle
//! for clarifying questions and flatten the results into SFT rows.
//!
//! ```bash
//! cargo run -p clarify-core --example sft_generation
//! ```

use std::sync::Arc;

use clarify_core::dataset::{encode_line, QueryRecord, UserIntent};
use clarify_core::gateway::{Gateway, MockBackend, MockEntry};
use clarify_core::prompts::{FewShotPool, SftGenOutput};
use clarify_core::sft::{
    build_feasible_human, build_feasible_model, flatten_and_stats, generate_sft_examples, FeasibleModelConfig,
    DEFAULT_TRAIN_RATIO,
};

fn query(id: &str, question: &str, answers: &[&str]) -> QueryRecord {
    QueryRecord {
        id: id.into(),
        question: question.into(),
        users: answers.iter().map(|a| UserIntent::new([*a])).collect(),
        ambiguous: None,
        split_tag: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let queries = vec![
        query("cup", "who won the world cup", &["Argentina", "France"]),
        query("pm", "who is the prime minister", &["Keir Starmer", "Rishi Sunak"]),
        query("moby", "who wrote moby dick", &["Herman Melville", "Melville"]),
        query("sea", "what is the largest ocean", &["Pacific"]),
        query("ten", "how many legs does a spider have", &["eight"]),
    ];

    let cup = SftGenOutput {
        clarifying_question: "Which year's tournament do you mean?".into(),
        pairs: vec![("The 2022 one.".into(), "Argentina".into()), ("The 2018 one.".into(), "France".into())],
    };
    let pm = SftGenOutput {
        clarifying_question: "As of when?".into(),
        pairs: vec![("Right now.".into(), "Keir Starmer".into()), ("In 2023.".into(), "Rishi Sunak".into())],
    };
    let oracle = Arc::new(MockBackend::new(vec![
        MockEntry::complete("Question: who won the world cup\nPossible", cup.render()),
        MockEntry::complete("Question: who is the prime minister\nPossible", pm.render()),
        MockEntry::complete("Question: who wrote moby dick\nPossible", "None"),
        // few-shot sampling for the model-built set: greedy and T=1 disagree
        MockEntry::complete("Question: who is the prime minister\nAnswer:", " Keir Starmer").at_temperature(0.0),
        MockEntry::complete("Question: who is the prime minister\nAnswer:", " Rishi Sunak").at_temperature(1.0),
    ]));
    let mut gateway = Gateway::new();
    gateway.register("oracle", oracle.clone());

    let mut sets: Vec<_> = queries.iter().map(build_feasible_human).collect();
    for s in &sets {
        println!("human {:<5} {:?}", s.query_id, s.answers);
    }

    let pool = FewShotPool::from_queries(&queries);
    let cfg = FeasibleModelConfig {
        reps: 3,
        shots: 2,
        seed: 5,
        max_tokens: 32,
    };
    let model_set = build_feasible_model(&gateway, &queries[1], "oracle", &pool, &cfg)?;
    println!("model {:<5} {:?} (gold overlap: {})", model_set.query_id, model_set.answers, model_set.gold_overlap);
    sets.push(model_set);

    let run = generate_sft_examples(&gateway, &sets, "oracle")?;
    for s in &run.skipped {
        println!("skipped {:<5} {:?}", s.query_id, s.reason);
    }

    let (rows, stats) = flatten_and_stats(&run.examples, DEFAULT_TRAIN_RATIO);
    println!("\n{stats:?}");
    for row in &rows {
        println!("{}", encode_line(row)?);
    }
    Ok(())
}
