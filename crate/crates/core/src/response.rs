//! Parsing of tagged agent responses.
//!
//! Agents answer with a `<thinking>` span and a `<result>` span. Every error
//! here renders to a message that is sent back verbatim as the next retry
//! prompt's `{error_message}`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema::{SchemaMeta, SchemaSlice, SliceEntry, TestData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl core::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub thinking: String,
    pub result_block: String,
    pub raw: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("The response has no <result>...</result> block. Wrap the final answer in <result> tags.")]
    MissingResultTag,
    #[error("The content inside <result> is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("{0}")]
    SchemaMismatch(String),
    #[error("Test data does not match the sliced schema: {0}.")]
    SliceMismatch(String),
    #[error("The test data contains no rows; provide at least one row.")]
    EmptyTestData,
    #[error("The <result> block contains no Python code.")]
    EmptyScript,
}

fn last_span<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = raw.rfind(open)? + open.len();
    let len = raw[start..].find(close)?;
    Some(&raw[start..start + len])
}

/// Removes one level of surrounding markdown code fence, if present.
fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // drop the info string (```json, ```python)
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    let body = body.trim_end();
    body.strip_suffix("```").unwrap_or(body).trim()
}

/// Extracts the last `<thinking>` and `<result>` spans.
pub fn parse_tagged(raw: &str) -> Result<AgentResponse, ParseError> {
    let result = last_span(raw, "<result>", "</result>").ok_or(ParseError::MissingResultTag)?;
    let thinking = last_span(raw, "<thinking>", "</thinking>").unwrap_or("");
    Ok(AgentResponse {
        thinking: thinking.trim().to_string(),
        result_block: strip_fences(result).to_string(),
        raw: raw.to_string(),
        usage: Usage::default(),
    })
}

fn parse_json(block: &str) -> Result<Value, ParseError> {
    serde_json::from_str(block.trim()).map_err(|e| ParseError::InvalidJson(e.to_string()))
}

/// `{"relevant_schema": [{"table": .., "columns": [..]}, ..]}` validated against `meta`.
pub fn parse_slicer_result(block: &str, meta: &SchemaMeta) -> Result<SchemaSlice, ParseError> {
    #[derive(Deserialize)]
    struct Wire {
        relevant_schema: Vec<SliceEntry>,
    }
    let value = parse_json(block)?;
    let wire: Wire = serde_json::from_value(value).map_err(|e| {
        ParseError::InvalidJson(format!(
            "expected {{\"relevant_schema\": [{{\"table\": ..., \"columns\": [...]}}]}} ({e})"
        ))
    })?;
    SchemaSlice::validated(wire.relevant_schema, meta).map_err(ParseError::SchemaMismatch)
}

/// `{"test_data": {table: [{column: scalar, ..}, ..]}}` validated against `slice`.
pub fn parse_tester_result(block: &str, slice: &SchemaSlice) -> Result<TestData, ParseError> {
    let value = parse_json(block)?;
    let Some(tables) = value.get("test_data").and_then(Value::as_object) else {
        return Err(ParseError::InvalidJson(
            "expected an object with key \"test_data\" mapping table names to lists of rows".into(),
        ));
    };
    let mut problems = Vec::new();
    let mut out: BTreeMap<String, Vec<serde_json::Map<String, Value>>> = BTreeMap::new();
    for (table, rows) in tables {
        let Some(rows) = rows.as_array() else {
            return Err(ParseError::InvalidJson(format!(
                "test_data.{table} must be a list of row objects"
            )));
        };
        let Some(entry) = slice.entry(table) else {
            problems.push(format!("table '{table}' is not in the sliced schema"));
            continue;
        };
        let dest = out.entry(entry.table.clone()).or_default();
        for (i, row) in rows.iter().enumerate() {
            let Some(obj) = row.as_object() else {
                return Err(ParseError::InvalidJson(format!(
                    "test_data.{table}[{i}] must be an object of column values"
                )));
            };
            let mut fixed = serde_json::Map::new();
            for (col, v) in obj {
                if v.is_array() || v.is_object() {
                    return Err(ParseError::InvalidJson(format!(
                        "test_data.{table}[{i}].{col} must be a scalar (null, boolean, number or string)"
                    )));
                }
                match entry.columns.iter().find(|c| c.eq_ignore_ascii_case(col)) {
                    Some(name) => {
                        fixed.insert(name.clone(), v.clone());
                    }
                    None => problems.push(format!("column '{table}.{col}' is not in the sliced schema")),
                }
            }
            dest.push(fixed);
        }
    }
    if !problems.is_empty() {
        problems.dedup();
        return Err(ParseError::SliceMismatch(problems.join("; ")));
    }
    let data = TestData { tables: out };
    if data.row_count() == 0 {
        return Err(ParseError::EmptyTestData);
    }
    Ok(data)
}

/// The solver's Python script, fences removed.
pub fn parse_solver_result(block: &str) -> Result<String, ParseError> {
    let code = strip_fences(block);
    if code.is_empty() {
        Err(ParseError::EmptyScript)
    } else {
        Ok(code.to_string())
    }
}
