//! Simulation harness, evaluation suite, and preference-data factory for
//! dialogue systems that ask clarifying questions.

pub mod cli;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod prefs;
pub mod prompts;
pub mod sft;
pub mod user_sim;
