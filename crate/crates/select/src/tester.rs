//! Stage 2b: synthesized test data on which the duel queries diverge.

use std::collections::BTreeMap;

use mdd_select_core::{
    canonicalize, parse_tester_result, render_prompt, render_schema_with_types, AgentRole, Bindings, DuelPair,
    PromptKind, ResultSet, SchemaMeta, SchemaSlice, TestData, ValueHints,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{evidence_str, run_loop, AgentRun, AgentSettings, AttemptOutcome, Step};
use crate::clustering::CandidateSet;
use crate::llm::Provider;
use crate::sqlite::{execute_sql, materialize_mdd, quote_ident, Database};

/// A materialized distinguishing database and the duel results on it.
///
/// Only constructible when the two results differ canonically.
#[derive(Debug)]
pub struct MddInstance {
    db: Database,
    slice: SchemaSlice,
    data: TestData,
    champion_result: ResultSet,
    challenger_result: ResultSet,
}

impl MddInstance {
    /// `None` when the results are canonically identical.
    pub fn new(
        db: Database,
        slice: SchemaSlice,
        data: TestData,
        champion_result: ResultSet,
        challenger_result: ResultSet,
    ) -> Option<Self> {
        (canonicalize(&champion_result) != canonicalize(&challenger_result))
            .then_some(MddInstance { db, slice, data, champion_result, challenger_result })
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn slice(&self) -> &SchemaSlice {
        &self.slice
    }

    pub fn data(&self) -> &TestData {
        &self.data
    }

    pub fn champion_result(&self) -> &ResultSet {
        &self.champion_result
    }

    pub fn challenger_result(&self) -> &ResultSet {
        &self.challenger_result
    }
}

const HINTS_PER_COLUMN: usize = 3;
const HINT_POOL: usize = 50;

/// FNV-1a; stable across platforms and releases.
pub(crate) fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Up to three distinct non-null values per sliced column, chosen with a
/// generator seeded by `seed` and the column's name.
pub fn sample_value_hints(db: &Database, slice: &SchemaSlice, seed: u64, timeout_ms: u64) -> ValueHints {
    let mut hints = ValueHints::default();
    for entry in slice.entries() {
        let mut per_col = BTreeMap::new();
        for col in &entry.columns {
            let sql = format!(
                "SELECT DISTINCT {c} FROM {t} WHERE {c} IS NOT NULL LIMIT {HINT_POOL}",
                c = quote_ident(col),
                t = quote_ident(&entry.table)
            );
            let Ok(rs) = execute_sql(db, &sql, timeout_ms).result else { continue };
            let pool: Vec<_> = rs.rows().iter().filter_map(|r| r.0.first().cloned()).collect();
            if pool.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&[&entry.table, col]));
            let mut picked = sample(&mut rng, pool.len(), HINTS_PER_COLUMN.min(pool.len())).into_vec();
            picked.sort_unstable();
            per_col.insert(col.clone(), picked.into_iter().map(|i| pool[i].clone()).collect());
        }
        if !per_col.is_empty() {
            hints.by_table.insert(entry.table.clone(), per_col);
        }
    }
    hints
}

pub fn tester_prompt(
    cs: &CandidateSet,
    slice: &SchemaSlice,
    meta: &SchemaMeta,
    hints: Option<&ValueHints>,
    duel: &DuelPair,
) -> String {
    let bindings: Bindings = [
        ("sliced_schema", render_schema_with_types(slice, meta, hints)),
        ("question", cs.question.clone()),
        ("evidence_str", evidence_str(cs.evidence.as_deref())),
        ("sql_1", cs.candidates[duel.champion_index].trim().to_string()),
        ("sql_2", cs.candidates[duel.challenger_index].trim().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    render_prompt(AgentRole::Tester, PromptKind::Initial, &bindings).expect("tester bindings complete").user
}

/// The `{error_message}` sent when both queries agree on the test data.
pub fn identical_results_message(result: &ResultSet) -> String {
    let shown = serde_json::to_string(&result.rows()).unwrap_or_default();
    format!(
        "SQL 1 and SQL 2 returned IDENTICAL results on this test data (rows: {shown}). \
The data does not distinguish their logic; construct rows that exercise the condition on which they differ."
    )
}

/// Asks for test data until the duel queries execute on it and disagree.
#[allow(clippy::too_many_arguments)]
pub fn run_tester(
    cs: &CandidateSet,
    slice: &SchemaSlice,
    meta: &SchemaMeta,
    hints: Option<&ValueHints>,
    duel: &DuelPair,
    provider: &dyn Provider,
    settings: &AgentSettings,
    t_max: u32,
    sql_timeout_ms: u64,
) -> AgentRun<MddInstance> {
    let champion = cs.candidates[duel.champion_index].as_str();
    let challenger = cs.candidates[duel.challenger_index].as_str();
    let prompt = tester_prompt(cs, slice, meta, hints, duel);
    run_loop(provider, AgentRole::Tester, settings, &cs.question_id, t_max, prompt, |resp, _| {
        let data = match parse_tester_result(&resp.result_block, slice) {
            Ok(d) => d,
            Err(e) => return Step::error(e.to_string()),
        };
        let db = match materialize_mdd(slice, meta, &data) {
            Ok(db) => db,
            Err(e) => return Step::error(e.to_string()),
        };
        let e1 = execute_sql(&db, champion, sql_timeout_ms).result;
        let e2 = execute_sql(&db, challenger, sql_timeout_ms).result;
        match (e1, e2) {
            (Ok(r1), Ok(r2)) => {
                if canonicalize(&r1) == canonicalize(&r2) {
                    return Step::Retry {
                        message: identical_results_message(&r1),
                        outcome: AttemptOutcome::IdenticalResults { result: r1 },
                    };
                }
                Step::Done(MddInstance::new(db, slice.clone(), data, r1, r2).expect("results differ"))
            }
            (r1, r2) => {
                let msgs: Vec<String> = [("SQL 1", r1.err()), ("SQL 2", r2.err())]
                    .into_iter()
                    .filter_map(|(l, e)| e.map(|e| format!("Executing {l} on the test data failed: {e}")))
                    .collect();
                Step::error(msgs.join("\n"))
            }
        }
    })
}
