//! Bundled miniature database, mini-benchmark and the replayable case study
//! (champion ignores the `yearmonth` constraint, challenger enforces it).

use std::path::Path;

use mdd_select_core::{AgentRole, DuelPair, ResultSet};

use crate::clustering::CandidateSet;
use crate::executor::MockExecutor;
use crate::llm::{ScriptFile, ScriptedProvider};
use crate::sqlite::{Database, SqlError};

pub const DEBIT_CARD_SQL: &str = include_str!("../fixtures/debit_card.sql");
pub const MINI_BENCH_JSONL: &str = include_str!("../fixtures/mini_bench.jsonl");
pub const DEBIT_CARD_DB_ID: &str = "debit_card";
pub const CASE_STUDY_QUESTION_ID: &str = "1500";

pub const CASE_STUDY_SLICER_RESPONSE: &str = r#"<thinking>
SQL 1 reads transactions_1k and products. SQL 2 additionally joins yearmonth on CustomerID and filters yearmonth.Date.
</thinking>
<result>
{"relevant_schema": [
  {"table": "transactions_1k", "columns": ["TransactionID", "CustomerID", "Date", "ProductID"]},
  {"table": "products", "columns": ["ProductID", "Description"]},
  {"table": "yearmonth", "columns": ["CustomerID", "Date"]}
]}
</result>"#;

pub const CASE_STUDY_TESTER_RESPONSE: &str = r#"<thinking>
SQL 1 accepts any September 2013 transaction. SQL 2 also needs a yearmonth row for the same customer.
A September transaction by customer 100 with no yearmonth row for customer 100 separates them.
</thinking>
<result>
{"test_data": {
  "products": [{"ProductID": 2, "Description": "LPG"}],
  "transactions_1k": [{"TransactionID": 1, "CustomerID": 100, "Date": "20130915", "ProductID": 2}],
  "yearmonth": [{"CustomerID": 200, "Date": "201309"}, {"CustomerID": 300, "Date": "201309"}]
}}
</result>"#;

pub const CASE_STUDY_SCRIPT: &str = "mask = yearmonth['Date'].str.startswith('201309')
filtered_ym = yearmonth[mask]
merged_tx = pd.merge(filtered_ym, transactions_1k, on='CustomerID')
result = pd.merge(merged_tx, products, on='ProductID')[['Description']]";

pub fn case_study_solver_response() -> String {
    format!(
        "<thinking>\nOnly customers with a September 2013 yearmonth entry count.\n</thinking>\n<result>\n```python\n{CASE_STUDY_SCRIPT}\n```\n</result>"
    )
}

/// Fresh in-memory copy of the miniature database.
pub fn debit_card_db() -> Result<Database, SqlError> {
    let db = Database::in_memory(DEBIT_CARD_DB_ID)?;
    db.execute_batch(DEBIT_CARD_SQL)?;
    Ok(db)
}

/// Writes `<root>/debit_card/debit_card.sqlite`, replacing any existing file.
pub fn write_debit_card_db(db_root: &Path) -> Result<std::path::PathBuf, SqlError> {
    let dir = db_root.join(DEBIT_CARD_DB_ID);
    let io = |e: std::io::Error| SqlError::Unreadable { path: dir.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let path = dir.join(format!("{DEBIT_CARD_DB_ID}.sqlite"));
    if path.exists() {
        std::fs::remove_file(&path).map_err(io)?;
    }
    Database::open_writable(&path)?.execute_batch(DEBIT_CARD_SQL)?;
    Ok(path)
}

/// The case-study question, read from the bundled mini-benchmark.
pub fn case_study_candidates() -> CandidateSet {
    let line = MINI_BENCH_JSONL.lines().next().expect("bundled benchmark is non-empty");
    serde_json::from_str(line).expect("bundled benchmark line parses")
}

/// Champion: index 0 (three equivalent candidates); challenger: index 1.
pub fn case_study_duel() -> DuelPair {
    DuelPair { champion_index: 0, challenger_index: 1, champion_cluster_size: 3, challenger_cluster_size: 2 }
}

pub fn case_study_script() -> ScriptFile {
    let mut roles = std::collections::BTreeMap::new();
    roles.insert(AgentRole::Slicer, vec![CASE_STUDY_SLICER_RESPONSE.to_string()]);
    roles.insert(AgentRole::Tester, vec![CASE_STUDY_TESTER_RESPONSE.to_string()]);
    roles.insert(AgentRole::Solver, vec![case_study_solver_response()]);
    [(CASE_STUDY_QUESTION_ID.to_string(), roles)].into_iter().collect()
}

pub fn case_study_provider() -> ScriptedProvider {
    ScriptedProvider::from_script(case_study_script())
}

/// The reference script returns an empty `Description` table.
pub fn case_study_executor() -> MockExecutor {
    let empty = ResultSet::new(Some(vec!["Description".into()]), Vec::new()).expect("no rows");
    MockExecutor::new().with_result(CASE_STUDY_SCRIPT, empty)
}

/// JSON for `--executor mock:<file>`.
pub fn case_study_executor_json() -> String {
    serde_json::json!({ CASE_STUDY_SCRIPT: { "status": "ok", "columns": ["Description"], "rows": [] } }).to_string()
}
