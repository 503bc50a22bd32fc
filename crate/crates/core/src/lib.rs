//! Allocation-only core of the MDD candidate selector.
//!
//! Everything in this crate is pure: result-set normalization and canonical
//! forms, execution-consistency clustering over already-computed outcomes,
//! the Hungarian assignment solver, Bipartite Soft-F1 scoring, the verbatim
//! agent prompt templates and the parsers for agent responses. IO (SQLite,
//! HTTP, child processes) lives in the `mdd-select` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assign;
pub mod bsf1;
pub mod cluster;
pub mod prompt;
pub mod response;
pub mod result;
pub mod schema;

pub use assign::{hungarian, Assignment, CostMatrix};
pub use bsf1::{bsf1, overlap_ratio, verdict, BsF1Score, DuelOutcome, DuelReason};
pub use cluster::{cluster_outcomes, select_duel, Cluster, DuelPair, DuelSelection};
pub use prompt::{render_prompt, AgentRole, Bindings, PromptError, PromptKind, RenderedPrompt};
pub use response::{
    parse_slicer_result, parse_solver_result, parse_tagged, parse_tester_result, AgentResponse,
    ParseError, Usage,
};
pub use result::{
    canonicalize, normalize_value, values_equal, AtomicValue, CanonicalForm, RawCell, ResultSet,
    ResultSetError, Row,
};
pub use schema::{
    render_relationships, render_schema_with_types, ColumnMeta, ForeignKey, SchemaMeta,
    SchemaSlice, SliceEntry, TableMeta, TestData, ValueHints,
};
