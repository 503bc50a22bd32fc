//! Stage 3: an executable reference script and its result on the MDD.

use std::fmt::Write as _;

use mdd_select_core::{
    parse_solver_result, render_prompt, render_relationships, AgentRole, Bindings, PromptKind, ResultSet,
    SchemaMeta,
};

use crate::agent::{evidence_str, run_loop, AgentFailure, AgentRun, AgentSettings, Step};
use crate::executor::{MddTables, ScriptExecutor};
use crate::llm::Provider;
use crate::sqlite::dump_table;
use crate::tester::MddInstance;

pub struct SolverRequest<'a> {
    pub question_id: &'a str,
    pub question: &'a str,
    pub evidence: Option<&'a str>,
    pub mdd: &'a MddInstance,
    pub relationships: String,
    pub table_names: Vec<String>,
}

impl<'a> SolverRequest<'a> {
    pub fn new(
        question_id: &'a str,
        question: &'a str,
        evidence: Option<&'a str>,
        mdd: &'a MddInstance,
        meta: &SchemaMeta,
    ) -> Self {
        SolverRequest {
            question_id,
            question,
            evidence,
            mdd,
            relationships: render_relationships(mdd.slice(), meta),
            table_names: mdd.slice().tables().map(str::to_string).collect(),
        }
    }
}

/// Every sliced table of the MDD, columns in slice order.
pub fn mdd_tables(mdd: &MddInstance) -> Result<MddTables, String> {
    mdd.slice()
        .entries()
        .iter()
        .map(|e| dump_table(mdd.db(), &e.table, &e.columns).map(|rs| (e.table.clone(), rs)))
        .collect()
}

/// `{test_data_with_types}`: per table, typed columns then one JSON array per row.
pub fn render_test_data_with_types(tables: &MddTables, mdd: &MddInstance, meta: &SchemaMeta) -> String {
    let mut out = String::from("### Test Data (Pandas DataFrames with column types):\n");
    for entry in mdd.slice().entries() {
        let Some(rs) = tables.get(&entry.table) else { continue };
        let table = meta.table(&entry.table);
        let cols: Vec<String> = entry
            .columns
            .iter()
            .map(|c| {
                let ty = table.and_then(|t| t.column(c)).map(|m| m.declared_type.as_str()).unwrap_or("");
                format!("{c} ({})", if ty.is_empty() { "ANY" } else { ty })
            })
            .collect();
        let _ = writeln!(out, "\nDataFrame `{}` ({} rows)", entry.table, rs.len());
        let _ = writeln!(out, "Columns: {}", cols.join(", "));
        for row in rs.rows() {
            let _ = writeln!(out, "  {}", serde_json::to_string(row).unwrap_or_default());
        }
    }
    out.truncate(out.trim_end().len());
    out
}

pub fn solver_prompt(req: &SolverRequest<'_>, tables: &MddTables, meta: &SchemaMeta) -> String {
    let bindings: Bindings = [
        ("test_data_with_types", render_test_data_with_types(tables, req.mdd, meta)),
        ("relationships", req.relationships.clone()),
        ("df_names", req.table_names.join(", ")),
        ("question", req.question.to_string()),
        ("evidence_str", evidence_str(req.evidence)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    render_prompt(AgentRole::Solver, PromptKind::Initial, &bindings).expect("solver bindings complete").user
}

/// Asks for a script until one runs; the reference result is normalized.
pub fn run_solver(
    req: &SolverRequest<'_>,
    meta: &SchemaMeta,
    provider: &dyn Provider,
    executor: &dyn ScriptExecutor,
    settings: &AgentSettings,
    t_max: u32,
    script_timeout_ms: u64,
) -> AgentRun<ResultSet> {
    let tables = match mdd_tables(req.mdd) {
        Ok(t) => t,
        Err(e) => {
            return AgentRun {
                trace: Default::default(),
                outcome: Err(AgentFailure::RetriesExhausted { attempts: 0, last_error: e }),
            }
        }
    };
    let prompt = solver_prompt(req, &tables, meta);
    run_loop(provider, AgentRole::Solver, settings, req.question_id, t_max, prompt, |resp, attempt| {
        let script = match parse_solver_result(&resp.result_block) {
            Ok(s) => s,
            Err(e) => return Step::error(e.to_string()),
        };
        attempt.script = Some(script.clone());
        match executor.execute(&script, &tables, script_timeout_ms) {
            Ok(outcome) => match outcome.result {
                Ok(rs) => Step::Done(rs.normalized()),
                Err(traceback) => Step::error(traceback),
            },
            Err(e) => Step::Abort(e.into()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::MockExecutor;
    use crate::fixtures;
    use crate::llm::ScriptedProvider;
    use crate::agent::AttemptOutcome;
    use crate::sqlite::{execute_sql, introspect_schema, materialize_mdd};
    use mdd_select_core::{parse_slicer_result, parse_tagged, parse_tester_result};

    fn settings() -> AgentSettings {
        AgentSettings { model: "m".into(), temperature: 0.7, context_budget_chars: None }
    }

    fn case_mdd() -> (MddInstance, SchemaMeta) {
        let db = fixtures::debit_card_db().unwrap();
        let meta = introspect_schema(&db).unwrap();
        let block = parse_tagged(fixtures::CASE_STUDY_SLICER_RESPONSE).unwrap().result_block;
        let slice = parse_slicer_result(&block, &meta).unwrap();
        let tblock = parse_tagged(fixtures::CASE_STUDY_TESTER_RESPONSE).unwrap().result_block;
        let data = parse_tester_result(&tblock, &slice).unwrap();
        let mdd_db = materialize_mdd(&slice, &meta, &data).unwrap();
        let cs = fixtures::case_study_candidates();
        let r1 = execute_sql(&mdd_db, &cs.candidates[0], 1_000).result.unwrap();
        let r2 = execute_sql(&mdd_db, &cs.candidates[1], 1_000).result.unwrap();
        (MddInstance::new(mdd_db, slice, data, r1, r2).unwrap(), meta)
    }

    #[test]
    fn case_study_reference_is_empty() {
        let (mdd, meta) = case_mdd();
        let req = SolverRequest::new("1500", "q", None, &mdd, &meta);
        assert_eq!(req.table_names, ["products", "transactions_1k", "yearmonth"]);
        let p = ScriptedProvider::new();
        p.push(AgentRole::Solver, fixtures::case_study_solver_response());
        let ex = fixtures::case_study_executor();
        let run = run_solver(&req, &meta, &p, &ex, &settings(), 3, 1_000);
        assert!(run.outcome.unwrap().is_empty());
        assert_eq!(run.trace.attempts[0].script.as_deref(), Some(fixtures::CASE_STUDY_SCRIPT));
        let prompt = p.calls()[0].1.messages[0].content.clone();
        assert!(prompt.contains("### Available DataFrames (Pandas Variables):\nproducts, transactions_1k, yearmonth"));
        assert!(prompt.contains("transactions_1k.ProductID = products.ProductID (FOREIGN KEY)"), "{prompt}");
        assert!(prompt.contains("  [1,\"20130915\",100,2]"), "{prompt}");
    }

    #[test]
    fn traceback_is_fed_back_then_fixed() {
        let (mdd, meta) = case_mdd();
        let req = SolverRequest::new("1500", "q", None, &mdd, &meta);
        let p = ScriptedProvider::new();
        p.push(AgentRole::Solver, "<result>result = transactions_1k['Amount']</result>");
        p.push(AgentRole::Solver, "<result>result = products</result>");
        let ex = MockExecutor::new().with_error("result = transactions_1k['Amount']", "KeyError: 'Amount'");
        let run = run_solver(&req, &meta, &p, &ex, &settings(), 3, 1_000);
        assert_eq!(run.outcome.unwrap().len(), 1);
        assert!(p.calls()[1].1.last_user_turn().unwrap().contains("---\nKeyError: 'Amount'\n---"));
    }

    #[test]
    fn timeout_is_an_error_attempt() {
        let (mdd, meta) = case_mdd();
        let req = SolverRequest::new("1500", "q", None, &mdd, &meta);
        let p = ScriptedProvider::new();
        p.push(AgentRole::Solver, "<result>while True: pass</result>");
        let ex = MockExecutor::new().with_hang("while True: pass");
        let run = run_solver(&req, &meta, &p, &ex, &settings(), 1, 50);
        assert!(run.outcome.is_err());
        assert_eq!(run.trace.attempts[0].outcome, AttemptOutcome::Error { message: "timeout".into() });
    }

    #[test]
    fn payload_tables_equal_table_dumps() {
        let (mdd, _) = case_mdd();
        let tables = mdd_tables(&mdd).unwrap();
        assert!(mdd.slice().entries().iter().all(|e| tables.contains_key(&e.table)));
        let payload = crate::executor::serialize_mdd_payload("x", &tables, 5);
        let v: serde_json::Value = serde_json::from_str(&payload).unwrap();
        let back: MddTables = serde_json::from_value(v["tables"].clone()).unwrap();
        assert_eq!(back, tables);
        assert_eq!(v["tables"]["yearmonth"]["rows"].as_array().unwrap().len(), 2);
    }
}
