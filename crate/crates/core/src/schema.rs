//! Schema metadata, schema slices and synthesized test data.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::result::AtomicValue;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub declared_type: String,
    pub is_pk: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub columns: Vec<ColumnMeta>,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .or_else(|| self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name)))
    }
}

/// One column pair of a foreign key. Composite keys share an `id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub id: u32,
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

/// Table, column and foreign-key metadata of a database.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaMeta {
    pub tables: Vec<TableMeta>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl SchemaMeta {
    /// Case-insensitive lookup (SQLite identifiers are case-insensitive),
    /// preferring an exact match.
    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .or_else(|| self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub table: String,
    pub columns: Vec<String>,
}

/// A subset of a schema's tables and columns.
///
/// Built through [`SchemaSlice::validated`] or [`SchemaSlice::full`], which
/// spell names as the metadata does, merge duplicates and order tables and
/// columns as they appear in the metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSlice {
    entries: Vec<SliceEntry>,
}

impl SchemaSlice {
    /// Every table and column of `meta`. Used when slicing fails.
    pub fn full(meta: &SchemaMeta) -> Self {
        SchemaSlice {
            entries: meta
                .tables
                .iter()
                .map(|t| SliceEntry {
                    table: t.name.clone(),
                    columns: t.columns.iter().map(|c| c.name.clone()).collect(),
                })
                .collect(),
        }
    }

    /// Checks `entries` against `meta`. The error lists every offending name.
    pub fn validated(entries: Vec<SliceEntry>, meta: &SchemaMeta) -> Result<Self, String> {
        if entries.is_empty() {
            return Err("The schema slice is empty; at least one table is required.".into());
        }
        let mut problems: Vec<String> = Vec::new();
        let mut chosen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in &entries {
            let Some(ti) = meta
                .tables
                .iter()
                .position(|t| t.name == e.table)
                .or_else(|| meta.tables.iter().position(|t| t.name.eq_ignore_ascii_case(&e.table)))
            else {
                problems.push(format!("unknown table '{}'", e.table));
                continue;
            };
            let t = &meta.tables[ti];
            if e.columns.is_empty() {
                problems.push(format!("table '{}' lists no columns", t.name));
                continue;
            }
            let cols = chosen.entry(ti).or_default();
            for c in &e.columns {
                match t.columns.iter().position(|m| m.name == *c).or_else(|| {
                    t.columns.iter().position(|m| m.name.eq_ignore_ascii_case(c))
                }) {
                    Some(ci) => {
                        if !cols.contains(&ci) {
                            cols.push(ci);
                        }
                    }
                    None => problems.push(format!("unknown column '{}.{}'", t.name, c)),
                }
            }
        }
        if !problems.is_empty() {
            return Err(format!(
                "Schema slice does not match the database schema: {}.",
                problems.join("; ")
            ));
        }
        let entries = chosen
            .into_iter()
            .map(|(ti, mut cols)| {
                cols.sort_unstable();
                let t = &meta.tables[ti];
                SliceEntry {
                    table: t.name.clone(),
                    columns: cols.into_iter().map(|ci| t.columns[ci].name.clone()).collect(),
                }
            })
            .collect();
        Ok(SchemaSlice { entries })
    }

    pub fn entries(&self) -> &[SliceEntry] {
        &self.entries
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.table.as_str())
    }

    pub fn entry(&self, table: &str) -> Option<&SliceEntry> {
        self.entries
            .iter()
            .find(|e| e.table == table)
            .or_else(|| self.entries.iter().find(|e| e.table.eq_ignore_ascii_case(table)))
    }

    pub fn contains(&self, table: &str, column: &str) -> bool {
        self.entry(table)
            .is_some_and(|e| e.columns.iter().any(|c| c.eq_ignore_ascii_case(column)))
    }

    /// Foreign keys of `meta` whose both endpoints lie inside the slice.
    pub fn foreign_keys<'m>(&self, meta: &'m SchemaMeta) -> Vec<&'m ForeignKey> {
        meta.foreign_keys
            .iter()
            .filter(|fk| self.contains(&fk.table, &fk.column) && self.contains(&fk.ref_table, &fk.ref_column))
            .collect()
    }
}

/// Rows to insert per table; each row maps column names to JSON scalars.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TestData {
    pub tables: BTreeMap<String, Vec<serde_json::Map<String, Value>>>,
}

impl TestData {
    pub fn row_count(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }
}

/// Example values per `table -> column`, shown to the tester.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueHints {
    pub by_table: BTreeMap<String, BTreeMap<String, Vec<AtomicValue>>>,
}

impl ValueHints {
    pub fn get(&self, table: &str, column: &str) -> Option<&[AtomicValue]> {
        self.by_table
            .get(table)
            .and_then(|m| m.get(column))
            .map(Vec::as_slice)
    }
}

fn display_value(v: &AtomicValue) -> String {
    match v {
        AtomicValue::Null => "NULL".into(),
        AtomicValue::Integer(n) => n.to_string(),
        AtomicValue::Float(f) => format!("{f}"),
        AtomicValue::Text(s) | AtomicValue::Date(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

/// Deterministic text rendering of a slice with types, keys and optional
/// example values (at most three per column).
pub fn render_schema_with_types(
    slice: &SchemaSlice,
    meta: &SchemaMeta,
    hints: Option<&ValueHints>,
) -> String {
    let mut out = String::new();
    for e in slice.entries() {
        let Some(t) = meta.table(&e.table) else {
            continue;
        };
        let _ = writeln!(out, "Table: {}", t.name);
        for c in &e.columns {
            let Some(cm) = t.column(c) else { continue };
            let ty = if cm.declared_type.is_empty() { "ANY" } else { &cm.declared_type };
            let _ = write!(out, "  - {} ({})", cm.name, ty);
            if cm.is_pk {
                out.push_str(" [PK]");
            }
            out.push('\n');
            if let Some(vals) = hints.and_then(|h| h.get(&t.name, &cm.name)) {
                if !vals.is_empty() {
                    let shown: Vec<String> = vals.iter().take(3).map(display_value).collect();
                    let _ = writeln!(out, "    Example values: {}", shown.join(", "));
                }
            }
        }
    }
    let fks = slice.foreign_keys(meta);
    if !fks.is_empty() {
        out.push_str("Foreign keys:\n");
        for fk in fks {
            let _ = writeln!(
                out,
                "  - {}.{} -> {}.{}",
                fk.table, fk.column, fk.ref_table, fk.ref_column
            );
        }
    }
    out
}

/// Primary and foreign keys inside a slice, one per line.
pub fn render_relationships(slice: &SchemaSlice, meta: &SchemaMeta) -> String {
    let mut lines = Vec::new();
    for e in slice.entries() {
        let Some(t) = meta.table(&e.table) else { continue };
        let pks: Vec<&str> = e
            .columns
            .iter()
            .filter_map(|c| t.column(c))
            .filter(|c| c.is_pk)
            .map(|c| c.name.as_str())
            .collect();
        if !pks.is_empty() {
            lines.push(format!("{}: PRIMARY KEY ({})", t.name, pks.join(", ")));
        }
    }
    for fk in slice.foreign_keys(meta) {
        lines.push(format!(
            "{}.{} = {}.{} (FOREIGN KEY)",
            fk.table, fk.column, fk.ref_table, fk.ref_column
        ));
    }
    if lines.is_empty() {
        "None".into()
    } else {
        lines.join("\n")
    }
}
