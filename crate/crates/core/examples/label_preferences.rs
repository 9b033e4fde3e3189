//! Generate candidate responses for one ambiguous query, rank them with the
//! Match ranker and print the resulting preference pairs.
//!
//! ```bash
//! cargo run -p clarify-core --example label_preferences
//! ```

use std::sync::Arc;

use clarify_core::dataset::{encode_line, QueryRecord, UserIntent};
use clarify_core::engine::EngineConfig;
use clarify_core::gateway::{Gateway, MockBackend, MockEntry};
use clarify_core::prefs::{label_query, PrefConfig, Ranker};

const Q: &str = "who won the world cup";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = QueryRecord {
        id: "world-cup".into(),
        question: Q.into(),
        users: vec![UserIntent::new(["Argentina"]), UserIntent::new(["France"])],
        ambiguous: Some(true),
        split_tag: None,
    };

    let forced = format!("Question: {Q}\nResponse:\nClarifying Question:");
    let mock = Arc::new(MockBackend::new(vec![
        // final answers after a clarifying exchange
        MockEntry::complete("Clarifying Answer: The 2022 one.\nAnswer:", "Argentina"),
        MockEntry::complete("Clarifying Answer: The 2018 one.\nAnswer:", "France"),
        MockEntry::complete("Clarifying Answer: Men's.\nAnswer:", "Argentina"),
        // simulated users
        MockEntry::complete("Pretend", "Clarifying Answer 1: The 2022 one.\nClarifying Answer 2: The 2018 one.")
            .also_containing("Which year"),
        MockEntry::complete("Pretend", "Clarifying Answer 1: Men's.\nClarifying Answer 2: Men's.")
            .also_containing("Men's or women's"),
        // clarifying questions: one sampled draw differs, the rest repeat the greedy one
        MockEntry::complete(forced.clone(), " Men's or women's?").at_sample(1),
        MockEntry::complete(forced, " Which year's tournament?"),
        // direct answer candidate
        MockEntry::complete(format!("Question: {Q}\nAnswer:"), " France"),
    ]));
    let mut gateway = Gateway::new();
    gateway.register("policy", mock.clone());

    let mut cfg = PrefConfig::new("policy", EngineConfig::new("policy", "policy", "policy"));
    cfg.direct = Some("policy".into());
    cfg.check(&gateway, Ranker::Match)?;

    let labeled = label_query(&gateway, &cfg, &query, Ranker::Match)?;

    println!("candidates:");
    for (i, c) in labeled.candidates.iter().enumerate() {
        println!("  [{i}] {:?} {:<40} match = {}", c.kind, c.text, c.scores[&Ranker::Match]);
    }
    println!("ranking (best first):");
    for g in &labeled.ranking {
        println!("  {:.2} {:?} {:?}", g.score, g.kind, g.members);
    }
    println!("pairs:");
    for p in &labeled.pairs {
        println!("{}", encode_line(p)?);
    }
    println!("backend calls: {}", mock.call_count());
    Ok(())
}
