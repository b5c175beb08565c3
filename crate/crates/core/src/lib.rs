//! Dialogue engine for a trading NPC whose LLM replies declare the current
//! trade state alongside the spoken line.
//!
//! The crate covers the whole offline loop: prompt assembly, parsing and
//! validating replies, the trade-state rules, price post-processing,
//! pluggable completion backends, batch simulation and metrics.

pub mod backend;
pub mod domain;
pub mod engine;
pub mod exec;
pub mod metrics;
pub mod parser;
pub mod postprocess;
pub mod prompt;
pub mod simulator;
pub mod state_machine;
pub mod synthetic;
pub mod transcript;

pub use exec::Execution;
