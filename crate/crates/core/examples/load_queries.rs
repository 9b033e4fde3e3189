//! Read query files in the three supported source formats and report
//! per-line problems without stopping at the first one.
//!
//! ```bash
//! cargo run -p clarify-core --example load_queries
//! ```

use clarify_core::dataset::{parse_queries_lenient, split_counts, QuerySchema};

const NQ_OPEN: &str = r#"{"question": "who wrote moby dick", "answer": ["Herman Melville", "herman melville", "Melville"]}
{"question": "capital of australia", "answer": ["Canberra"]}
{"question": "broken line", "answer": "not a list"}"#;

const AMBIGQA: &str = r#"{"id": "7", "question": "who won the world cup", "annotations": [{"type": "multipleQAs", "qaPairs": [{"question": "who won the 2022 world cup", "answer": ["Argentina"]}, {"question": "who won the 2018 world cup", "answer": ["France", "the French team"]}]}]}
{"id": "8", "question": "how tall is mount everest", "annotations": [{"type": "singleAnswer", "answer": ["8,849 m", "29,032 ft"]}]}"#;

fn main() {
    for (name, schema, text) in [("nq-open", QuerySchema::NqOpen, NQ_OPEN), ("ambigqa", QuerySchema::AmbigQa, AMBIGQA)] {
        let outcome = parse_queries_lenient(text, schema);
        println!("== {name}: {} records, {} errors", outcome.records.len(), outcome.errors.len());
        for r in &outcome.records {
            let users: Vec<_> = r.users.iter().map(|u| u.answers.join(" | ")).collect();
            println!("  {} k={} ambiguous={:?} users={users:?}", r.id, r.k(), r.ambiguous);
            if let Some(intent) = r.users.first().and_then(|u| u.intent_text.as_deref()) {
                println!("    first intent: {intent}");
            }
        }
        for e in &outcome.errors {
            println!("  error: {e}");
        }
        println!("  {:?}", split_counts(&outcome.records));
    }
}
