//! Render every prompt the harness sends and parse the two structured
//! replies it expects back.
//!
//! ```bash
//! cargo run -p clarify-core --example prompt_templates
//! ```

use clarify_core::prompts::{
    parse_sft_gen_output, parse_user_sim_output, render_answer_after_clarify, render_assistant_turn,
    render_direct_answer, render_sft_gen_prompt, render_user_sim_prompt, template_versions,
};

fn show(title: &str, body: &str) {
    println!("----- {title}\n{body}\n");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = "who won the world cup";
    let cq = "Clarifying Question: Which year's tournament?";

    show("assistant turn", &render_assistant_turn(q));
    show("direct answer", &render_direct_answer(q));
    show("user simulator", &render_user_sim_prompt(q, cq, &["Argentina", "France"])?);
    show("answer after clarify", &render_answer_after_clarify(q, cq, "The 2018 one."));
    show("sft generation", &render_sft_gen_prompt(q, &["Argentina", "France", "Germany"])?);

    let sim = parse_user_sim_output("Clarifying Answer 1: The 2022 one.\nClarifying Answer 2: None.", 3)?;
    println!("user simulator slots: {:?}", sim.slots);

    let raw = "Clarifying Question: Which year?\n1. Clarifying Answer: 2022\n1. Response: argentina\n\
               2. Clarifying Answer: 2014\n2. Response: Germany\n3. Clarifying Answer: 1966\n3. Response: England";
    println!("oracle parse: {:?}", parse_sft_gen_output(raw, &["Argentina", "France", "Germany"])?);

    println!("\ntemplate digests:");
    for (name, digest) in template_versions() {
        println!("  {name:<22} {digest}");
    }
    Ok(())
}
