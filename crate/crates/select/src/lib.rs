//! Std companion of `mdd-select-core`: SQLite execution, LLM providers,
//! script executors, the agent loops, the per-question pipeline and the
//! benchmark harness.

pub mod agent;
pub mod clustering;
pub mod executor;
pub mod fixtures;
pub mod llm;
pub mod slicer;
pub mod solver;
pub mod sqlite;
pub mod tester;
pub mod pipeline;
pub mod harness;
