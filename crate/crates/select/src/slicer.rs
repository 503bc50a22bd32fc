//! Stage 2a: a schema slice on which both duel queries prepare.

use mdd_select_core::{
    parse_slicer_result, render_prompt, render_schema_with_types, AgentRole, Bindings, DuelPair, PromptKind,
    SchemaMeta, SchemaSlice,
};

use crate::agent::{run_loop, AgentRun, AgentSettings, Step};
use crate::clustering::CandidateSet;
use crate::llm::Provider;
use crate::sqlite::dry_run;

/// `{candidate_sqls}`: the two duel queries, champion first.
pub fn render_candidate_sqls(champion: &str, challenger: &str) -> String {
    format!("SQL 1:\n{}\n\nSQL 2:\n{}", champion.trim(), challenger.trim())
}

pub fn slicer_prompt(meta: &SchemaMeta, champion: &str, challenger: &str) -> String {
    let bindings: Bindings = [
        ("full_schema", render_schema_with_types(&SchemaSlice::full(meta), meta, None)),
        ("candidate_sqls", render_candidate_sqls(champion, challenger)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    render_prompt(AgentRole::Slicer, PromptKind::Initial, &bindings).expect("slicer bindings complete").user
}

/// Asks for a slice until one passes a dry run of both duel queries.
pub fn run_slicer(
    cs: &CandidateSet,
    meta: &SchemaMeta,
    duel: &DuelPair,
    provider: &dyn Provider,
    settings: &AgentSettings,
    t_max: u32,
) -> AgentRun<SchemaSlice> {
    let champion = cs.candidates[duel.champion_index].as_str();
    let challenger = cs.candidates[duel.challenger_index].as_str();
    let prompt = slicer_prompt(meta, champion, challenger);
    run_loop(provider, AgentRole::Slicer, settings, &cs.question_id, t_max, prompt, |resp, _| {
        let slice = match parse_slicer_result(&resp.result_block, meta) {
            Ok(s) => s,
            Err(e) => return Step::error(e.to_string()),
        };
        let outcomes = match dry_run(&slice, meta, &[champion, challenger]) {
            Ok(o) => o,
            Err(e) => return Step::error(e.to_string()),
        };
        let failures: Vec<String> = outcomes
            .iter()
            .zip(["SQL 1", "SQL 2"])
            .filter_map(|(o, label)| {
                o.error_message().map(|m| format!("Dry-run of {label} on the sliced schema failed: {m}"))
            })
            .collect();
        if failures.is_empty() {
            Step::Done(slice)
        } else {
            Step::error(failures.join("\n"))
        }
    })
}
