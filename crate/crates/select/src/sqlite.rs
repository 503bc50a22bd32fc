//! SQLite execution: benchmark databases (read-only) and synthesized MDD
//! instances (fresh, in-memory, one per duel).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mdd_select_core::{
    ColumnMeta, ForeignKey, RawCell, ResultSet, SchemaMeta, SchemaSlice, TableMeta, TestData,
};
use rusqlite::types::{Value as SqlValue, ValueRef};
use rusqlite::{Connection, OpenFlags};
use serde::Serialize;

pub const DEFAULT_SQL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, thiserror::Error)]
pub enum SqlError {
    #[error("database {path} is unreadable: {message}")]
    Unreadable { path: String, message: String },
    #[error("sqlite error: {0}")]
    Sqlite(#[from] rusqlite::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DdlError {
    #[error("Schema slice references unknown table '{0}'.")]
    UnknownTable(String),
    #[error("Schema slice references unknown column '{table}.{column}'.")]
    UnknownColumn { table: String, column: String },
    #[error("Creating the sliced schema failed: {0}")]
    Engine(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaterializeError {
    #[error(transparent)]
    Ddl(#[from] DdlError),
    #[error("Test data references table '{0}', which is not part of the sliced schema.")]
    UnknownTable(String),
    #[error("Test data references column '{table}.{column}', which is not part of the sliced schema.")]
    UnknownColumn { table: String, column: String },
    #[error("Inserting row {row} into table '{table}' failed: {message}")]
    Insert { table: String, row: usize, message: String },
    #[error("Committing the test data failed: {0}")]
    Commit(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "location", rename_all = "snake_case")]
pub enum DatabaseRef {
    File(PathBuf),
    Memory(String),
}

impl std::fmt::Display for DatabaseRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatabaseRef::File(p) => write!(f, "{}", p.display()),
            DatabaseRef::Memory(label) => write!(f, ":memory:{label}"),
        }
    }
}

/// An open SQLite connection. Not shared between workers.
pub struct Database {
    conn: Connection,
    location: DatabaseRef,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database").field("location", &self.location).finish()
    }
}

impl Database {
    /// Opens a benchmark database. Writes through this handle are impossible.
    pub fn open_readonly(path: impl AsRef<Path>) -> Result<Self, SqlError> {
        let path = path.as_ref();
        let unreadable = |message: String| SqlError::Unreadable {
            path: path.display().to_string(),
            message,
        };
        if !path.is_file() {
            return Err(unreadable("no such file".into()));
        }
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| unreadable(e.to_string()))?;
        conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
            .map_err(|e| unreadable(e.to_string()))?;
        Ok(Database { conn, location: DatabaseRef::File(path.to_path_buf()) })
    }

    /// A fresh private in-memory database.
    pub fn in_memory(label: impl Into<String>) -> Result<Self, SqlError> {
        let conn = Connection::open_in_memory()?;
        Ok(Database { conn, location: DatabaseRef::Memory(label.into()) })
    }

    /// Opens a writable file database (fixtures and tooling only).
    pub fn open_writable(path: impl AsRef<Path>) -> Result<Self, SqlError> {
        let path = path.as_ref();
        let conn = Connection::open(path)?;
        Ok(Database { conn, location: DatabaseRef::File(path.to_path_buf()) })
    }

    pub fn location(&self) -> &DatabaseRef {
        &self.location
    }

    pub fn execute_batch(&self, sql: &str) -> Result<(), SqlError> {
        Ok(self.conn.execute_batch(sql)?)
    }

    pub(crate) fn conn(&self) -> &Connection {
        &self.conn
    }
}

/// Result of executing one statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub result: Result<ResultSet, String>,
    pub elapsed_ms: u64,
}

impl ExecOutcome {
    pub fn is_ok(&self) -> bool {
        self.result.is_ok()
    }

    pub fn error_message(&self) -> Option<&str> {
        self.result.as_ref().err().map(String::as_str)
    }
}

impl Serialize for ExecOutcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            status: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            result: Option<&'a ResultSet>,
            #[serde(skip_serializing_if = "Option::is_none")]
            error_message: Option<&'a str>,
            elapsed_ms: u64,
        }
        let (status, result, error_message) = match &self.result {
            Ok(rs) => ("ok", Some(rs), None),
            Err(e) => ("error", None, Some(e.as_str())),
        };
        Wire { status, result, error_message, elapsed_ms: self.elapsed_ms }.serialize(s)
    }
}

pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Table/column/foreign-key metadata in creation order.
pub fn introspect_schema(db: &Database) -> Result<SchemaMeta, SqlError> {
    let conn = db.conn();
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
    )?;
    let names: Vec<String> = stmt
        .query_map([], |r| r.get(0))?
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        let mut cols = conn.prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")?;
        let columns = cols
            .query_map([name], |r| {
                Ok(ColumnMeta {
                    name: r.get(0)?,
                    declared_type: r.get::<_, Option<String>>(1)?.unwrap_or_default(),
                    is_pk: r.get::<_, i64>(2)? > 0,
                })
            })?
            .collect::<Result<Vec<_>, _>>()?;
        tables.push(TableMeta { name: name.clone(), columns });
    }
    let mut foreign_keys = Vec::new();
    for t in &tables {
        let mut fk = conn.prepare(
            "SELECT id, seq, \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) ORDER BY id, seq",
        )?;
        let rows = fk
            .query_map([&t.name], |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    r.get::<_, i64>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        for (id, seq, ref_table, from, to) in rows {
            // a missing target column means "the referenced table's primary key"
            let ref_column = to.or_else(|| {
                let parent = tables.iter().find(|p| p.name.eq_ignore_ascii_case(&ref_table))?;
                let pks: Vec<&ColumnMeta> = parent.columns.iter().filter(|c| c.is_pk).collect();
                pks.get(seq as usize).map(|c| c.name.clone())
            });
            let Some(ref_column) = ref_column else { continue };
            foreign_keys.push(ForeignKey {
                id: id as u32,
                table: t.name.clone(),
                column: from,
                ref_table,
                ref_column,
            });
        }
    }
    Ok(SchemaMeta { tables, foreign_keys })
}

fn is_temporal(decl: Option<&str>) -> bool {
    decl.is_some_and(|d| {
        let d = d.to_ascii_uppercase();
        d.contains("DATE") || d.contains("TIME")
    })
}

fn raw_cell(v: ValueRef<'_>, decl: Option<&str>) -> RawCell {
    match v {
        ValueRef::Null => RawCell::Null,
        ValueRef::Integer(n) => RawCell::Integer(n),
        ValueRef::Real(f) => RawCell::Float(f),
        ValueRef::Text(t) => {
            let s = String::from_utf8_lossy(t).into_owned();
            if is_temporal(decl) {
                RawCell::DateTime(s)
            } else {
                RawCell::Text(s)
            }
        }
        ValueRef::Blob(b) => RawCell::Text(String::from_utf8_lossy(b).into_owned()),
    }
}

/// Prepares `sql` as a single read-only statement.
fn prepare_select<'c>(conn: &'c Connection, sql: &str) -> Result<rusqlite::Statement<'c>, String> {
    if sql.trim().is_empty() {
        return Err("empty SQL statement".into());
    }
    let stmt = conn.prepare(sql).map_err(|e| match e {
        rusqlite::Error::MultipleStatement => {
            "candidate must be a single SELECT statement; multiple statements provided".to_string()
        }
        other => engine_message(&other),
    })?;
    if !stmt.readonly() {
        return Err("candidate must be a read-only SELECT statement".into());
    }
    Ok(stmt)
}

fn engine_message(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        other => other.to_string(),
    }
}

/// Runs one read-only query with a wall-clock timeout.
pub fn execute_sql(db: &Database, sql: &str, timeout_ms: u64) -> ExecOutcome {
    let start = Instant::now();
    let result = run_query(db.conn(), sql, start + Duration::from_millis(timeout_ms));
    ExecOutcome { result, elapsed_ms: start.elapsed().as_millis() as u64 }
}

fn run_query(conn: &Connection, sql: &str, deadline: Instant) -> Result<ResultSet, String> {
    let mut stmt = prepare_select(conn, sql)?;
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let decls: Vec<Option<String>> =
        stmt.columns().iter().map(|c| c.decl_type().map(str::to_string)).collect();
    let _ = conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));
    let mut rows = Vec::new();
    let outcome = (|| {
        let mut q = stmt.query([])?;
        while let Some(r) = q.next()? {
            let mut cells = Vec::with_capacity(columns.len());
            for (i, decl) in decls.iter().enumerate() {
                cells.push(raw_cell(r.get_ref(i)?, decl.as_deref()));
            }
            rows.push(cells);
        }
        Ok::<_, rusqlite::Error>(())
    })();
    let _ = conn.progress_handler(0, None::<fn() -> bool>);
    match outcome {
        Ok(()) => ResultSet::from_raw(Some(columns), rows).map_err(|e| e.to_string()),
        Err(rusqlite::Error::SqliteFailure(f, _)) if f.code == rusqlite::ErrorCode::OperationInterrupted => {
            Err("timeout".into())
        }
        Err(e) => Err(engine_message(&e)),
    }
}

/// Foreign-key groups (by table and id) kept when creating a slice.
///
/// A group survives when every column pair lies in the slice and its target
/// columns are exactly the referenced table's primary key within the slice;
/// SQLite rejects inserts against any other target ("foreign key mismatch").
fn enforceable_foreign_keys<'m>(slice: &SchemaSlice, meta: &'m SchemaMeta) -> Vec<Vec<&'m ForeignKey>> {
    let mut groups: BTreeMap<(&str, u32), Vec<&ForeignKey>> = BTreeMap::new();
    for fk in &meta.foreign_keys {
        groups.entry((fk.table.as_str(), fk.id)).or_default().push(fk);
    }
    let mut out: Vec<Vec<&ForeignKey>> = groups
        .into_values()
        .filter(|g| {
            g.iter().all(|fk| slice.contains(&fk.table, &fk.column) && slice.contains(&fk.ref_table, &fk.ref_column))
        })
        .filter(|g| {
            let Some(parent) = meta.table(&g[0].ref_table) else { return false };
            let mut pk: Vec<String> =
                parent.columns.iter().filter(|c| c.is_pk).map(|c| c.name.to_ascii_lowercase()).collect();
            let mut targets: Vec<String> = g.iter().map(|fk| fk.ref_column.to_ascii_lowercase()).collect();
            pk.sort();
            targets.sort();
            !pk.is_empty() && pk == targets && pk.iter().all(|c| slice.contains(&parent.name, c))
        })
        .collect();
    // creation order of the child table, then id
    out.sort_by_key(|g| {
        let pos = slice.entries().iter().position(|e| e.table.eq_ignore_ascii_case(&g[0].table));
        (pos, g[0].id)
    });
    out
}

/// `CREATE TABLE` statements restricted to the slice.
pub fn synthesize_ddl(slice: &SchemaSlice, meta: &SchemaMeta) -> Result<Vec<String>, DdlError> {
    let fks = enforceable_foreign_keys(slice, meta);
    let mut out = Vec::with_capacity(slice.entries().len());
    for entry in slice.entries() {
        let table = meta.table(&entry.table).ok_or_else(|| DdlError::UnknownTable(entry.table.clone()))?;
        let mut parts = Vec::new();
        let mut pk = Vec::new();
        for c in &entry.columns {
            let cm = table.column(c).ok_or_else(|| DdlError::UnknownColumn {
                table: table.name.clone(),
                column: c.clone(),
            })?;
            if cm.declared_type.is_empty() {
                parts.push(quote_ident(&cm.name));
            } else {
                parts.push(format!("{} {}", quote_ident(&cm.name), cm.declared_type));
            }
            if cm.is_pk {
                pk.push(quote_ident(&cm.name));
            }
        }
        if !pk.is_empty() {
            parts.push(format!("PRIMARY KEY ({})", pk.join(", ")));
        }
        for g in fks.iter().filter(|g| g[0].table.eq_ignore_ascii_case(&table.name)) {
            let from: Vec<String> = g.iter().map(|fk| quote_ident(&fk.column)).collect();
            let to: Vec<String> = g.iter().map(|fk| quote_ident(&fk.ref_column)).collect();
            let parent = meta.table(&g[0].ref_table).map(|t| t.name.as_str()).unwrap_or(&g[0].ref_table);
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {} ({})",
                from.join(", "),
                quote_ident(parent),
                to.join(", ")
            ));
        }
        out.push(format!("CREATE TABLE {} ({})", quote_ident(&table.name), parts.join(", ")));
    }
    Ok(out)
}

fn create_slice_instance(slice: &SchemaSlice, meta: &SchemaMeta, label: &str) -> Result<Database, DdlError> {
    let ddl = synthesize_ddl(slice, meta)?;
    let db = Database::in_memory(label).map_err(|e| DdlError::Engine(e.to_string()))?;
    for stmt in &ddl {
        db.conn().execute_batch(stmt).map_err(|e| DdlError::Engine(engine_message(&e)))?;
    }
    Ok(db)
}

/// Prepares each SQL against an empty instance of the slice.
///
/// Preparation resolves every table and column reference without executing,
/// which is all the slice has to support.
pub fn dry_run(slice: &SchemaSlice, meta: &SchemaMeta, sqls: &[&str]) -> Result<Vec<ExecOutcome>, DdlError> {
    let db = create_slice_instance(slice, meta, "dry-run")?;
    Ok(sqls
        .iter()
        .map(|sql| {
            let start = Instant::now();
            let result = prepare_select(db.conn(), sql).map(|stmt| {
                let cols = stmt.column_names().into_iter().map(str::to_string).collect();
                ResultSet::new(Some(cols), Vec::new()).expect("no rows")
            });
            ExecOutcome { result, elapsed_ms: start.elapsed().as_millis() as u64 }
        })
        .collect())
}

/// Parent-first table order over the slice's enforceable foreign keys.
/// Returns the order and whether a cycle had to be broken.
fn insertion_order(slice: &SchemaSlice, meta: &SchemaMeta) -> (Vec<String>, bool) {
    let names: Vec<String> = slice.tables().map(str::to_string).collect();
    let idx = |t: &str| names.iter().position(|n| n.eq_ignore_ascii_case(t));
    let mut indegree = vec![0usize; names.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for g in enforceable_foreign_keys(slice, meta) {
        let (Some(child), Some(parent)) = (idx(&g[0].table), idx(&g[0].ref_table)) else { continue };
        if child != parent && !children[parent].contains(&child) {
            children[parent].push(child);
            indegree[child] += 1;
        }
    }
    let mut done = vec![false; names.len()];
    let mut order = Vec::with_capacity(names.len());
    let mut cyclic = false;
    while order.len() < names.len() {
        let next = (0..names.len()).find(|&i| !done[i] && indegree[i] == 0).unwrap_or_else(|| {
            cyclic = true;
            (0..names.len()).find(|&i| !done[i]).expect("unfinished table")
        });
        done[next] = true;
        order.push(names[next].clone());
        for &c in &children[next] {
            indegree[c] = indegree[c].saturating_sub(1);
        }
    }
    (order, cyclic)
}

fn sql_value(v: &serde_json::Value) -> SqlValue {
    match v {
        serde_json::Value::Null => SqlValue::Null,
        serde_json::Value::Bool(b) => SqlValue::Integer(*b as i64),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => SqlValue::Integer(i),
            None => SqlValue::Real(n.as_f64().unwrap_or(f64::NAN)),
        },
        serde_json::Value::String(s) => SqlValue::Text(s.clone()),
        other => SqlValue::Text(other.to_string()),
    }
}

/// Creates a fresh in-memory MDD instance and loads `data` into it.
pub fn materialize_mdd(slice: &SchemaSlice, meta: &SchemaMeta, data: &TestData) -> Result<Database, MaterializeError> {
    for (table, rows) in &data.tables {
        let entry = slice.entry(table).ok_or_else(|| MaterializeError::UnknownTable(table.clone()))?;
        for row in rows {
            for col in row.keys() {
                if !entry.columns.iter().any(|c| c.eq_ignore_ascii_case(col)) {
                    return Err(MaterializeError::UnknownColumn { table: table.clone(), column: col.clone() });
                }
            }
        }
    }
    let db = create_slice_instance(slice, meta, "mdd")?;
    let conn = db.conn();
    let (order, cyclic) = insertion_order(slice, meta);
    let engine = |e: rusqlite::Error| MaterializeError::Commit(engine_message(&e));
    conn.execute_batch("PRAGMA foreign_keys = ON").map_err(engine)?;
    conn.execute_batch("BEGIN").map_err(engine)?;
    if cyclic {
        conn.execute_batch("PRAGMA defer_foreign_keys = ON").map_err(engine)?;
    }
    let insert_all = || -> Result<(), MaterializeError> {
        for table in &order {
            let Some((_, rows)) = data.tables.iter().find(|(t, _)| t.eq_ignore_ascii_case(table)) else {
                continue;
            };
            for (i, row) in rows.iter().enumerate() {
                let sql = if row.is_empty() {
                    format!("INSERT INTO {} DEFAULT VALUES", quote_ident(table))
                } else {
                    let cols: Vec<String> = row.keys().map(|c| quote_ident(c)).collect();
                    let marks: Vec<String> = (1..=row.len()).map(|k| format!("?{k}")).collect();
                    format!("INSERT INTO {} ({}) VALUES ({})", quote_ident(table), cols.join(", "), marks.join(", "))
                };
                let values: Vec<SqlValue> = row.values().map(sql_value).collect();
                conn.execute(&sql, rusqlite::params_from_iter(values.iter())).map_err(|e| {
                    MaterializeError::Insert { table: table.clone(), row: i, message: engine_message(&e) }
                })?;
            }
        }
        Ok(())
    };
    if let Err(e) = insert_all() {
        let _ = conn.execute_batch("ROLLBACK");
        return Err(e);
    }
    if let Err(e) = conn.execute_batch("COMMIT") {
        let _ = conn.execute_batch("ROLLBACK");
        return Err(MaterializeError::Commit(engine_message(&e)));
    }
    Ok(db)
}

/// `SELECT *` of one table of a materialized instance, columns in slice order.
pub fn dump_table(db: &Database, table: &str, columns: &[String]) -> Result<ResultSet, String> {
    let cols = if columns.is_empty() {
        "*".to_string()
    } else {
        columns.iter().map(|c| quote_ident(c)).collect::<Vec<_>>().join(", ")
    };
    let sql = format!("SELECT {} FROM {} ORDER BY rowid", cols, quote_ident(table));
    execute_sql(db, &sql, DEFAULT_SQL_TIMEOUT_MS).result
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdd_select_core::{AtomicValue, Row, SliceEntry};

    fn memory_with(sql: &str) -> Database {
        let db = Database::in_memory("t").unwrap();
        db.execute_batch(sql).unwrap();
        db
    }

    fn entry(t: &str, cols: &[&str]) -> SliceEntry {
        SliceEntry { table: t.into(), columns: cols.iter().map(|c| c.to_string()).collect() }
    }

    const CLUB: &str = "CREATE TABLE club (club_id INTEGER PRIMARY KEY, title TEXT);
        CREATE TABLE member (member_id TEXT PRIMARY KEY, name TEXT, club INTEGER REFERENCES club(club_id), joined DATE);";

    #[test]
    fn select_one_and_missing_table() {
        let db = memory_with("");
        let ok = execute_sql(&db, "SELECT 1", 1000);
        assert_eq!(ok.result.unwrap().rows(), &[Row(vec![AtomicValue::Integer(1)])]);
        let err = execute_sql(&db, "SELECT * FROM missing_table", 1000);
        assert!(err.error_message().unwrap().contains("missing_table"));
    }

    #[test]
    fn rejects_multi_statement_and_writes() {
        let db = memory_with("CREATE TABLE t (a INT)");
        let multi = execute_sql(&db, "SELECT 1; SELECT 2", 1000);
        assert!(multi.error_message().unwrap().contains("single SELECT"));
        let write = execute_sql(&db, "DELETE FROM t", 1000);
        assert!(write.error_message().unwrap().contains("read-only"));
        assert!(execute_sql(&db, "SELECT 1;  ", 1000).is_ok());
        assert!(execute_sql(&db, "   ", 1000).error_message().unwrap().contains("empty"));
    }

    #[test]
    fn timeout_interrupts() {
        let db = memory_with("");
        let slow = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        let out = execute_sql(&db, slow, 50);
        assert_eq!(out.error_message(), Some("timeout"));
        assert!(out.elapsed_ms < 5_000);
        // the handler is cleared afterwards
        assert!(execute_sql(&db, "SELECT 2", 50).is_ok());
    }

    #[test]
    fn temporal_declared_columns_normalize_to_dates() {
        let db = memory_with("CREATE TABLE e (d DATETIME, s TEXT); INSERT INTO e VALUES ('2019-09-09 00:00:00', ' x ');");
        let rs = execute_sql(&db, "SELECT d, s FROM e", 1000).result.unwrap();
        assert!(matches!(&rs.rows()[0].0[0], AtomicValue::Date(d) if d == "2019-09-09"));
        assert!(matches!(&rs.rows()[0].0[1], AtomicValue::Text(s) if s == "x"));
        assert_eq!(rs.columns().unwrap(), &["d".to_string(), "s".to_string()]);
    }

    #[test]
    fn introspection() {
        let empty = memory_with("");
        assert!(introspect_schema(&empty).unwrap().tables.is_empty());
        let one = memory_with("CREATE TABLE t (id INTEGER PRIMARY KEY, v TEXT)");
        let m = introspect_schema(&one).unwrap();
        assert_eq!(m.tables.len(), 1);
        assert!(m.tables[0].columns[0].is_pk && !m.tables[0].columns[1].is_pk);
        let m = introspect_schema(&memory_with(CLUB)).unwrap();
        assert_eq!(m.tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["club", "member"]);
        assert_eq!(m.foreign_keys.len(), 1);
        assert_eq!((m.foreign_keys[0].table.as_str(), m.foreign_keys[0].ref_column.as_str()), ("member", "club_id"));
    }

    #[test]
    fn implicit_fk_target_resolves_to_parent_pk() {
        let m = introspect_schema(&memory_with("CREATE TABLE p (k INTEGER PRIMARY KEY); CREATE TABLE c (pk REFERENCES p);")).unwrap();
        assert_eq!(m.foreign_keys[0].ref_column, "k");
    }

    #[test]
    fn ddl_restricts_columns() {
        let meta = introspect_schema(&memory_with("CREATE TABLE t (a INT, b TEXT, c REAL)")).unwrap();
        let slice = SchemaSlice::validated(vec![entry("t", &["a", "b"])], &meta).unwrap();
        assert_eq!(synthesize_ddl(&slice, &meta).unwrap(), vec!["CREATE TABLE \"t\" (\"a\" INT, \"b\" TEXT)".to_string()]);

        let other = introspect_schema(&memory_with("CREATE TABLE t (a INT)")).unwrap();
        assert_eq!(
            synthesize_ddl(&slice, &other).unwrap_err(),
            DdlError::UnknownColumn { table: "t".into(), column: "b".into() }
        );
    }

    #[test]
    fn ddl_keeps_fk_covering_both_endpoints() {
        let meta = introspect_schema(&memory_with(CLUB)).unwrap();
        let slice = SchemaSlice::validated(vec![entry("club", &["club_id"]), entry("member", &["member_id", "club"])], &meta).unwrap();
        let ddl = synthesize_ddl(&slice, &meta).unwrap();
        assert!(ddl[1].contains("FOREIGN KEY (\"club\") REFERENCES \"club\" (\"club_id\")"), "{ddl:?}");
        // re-introspecting the created instance shows the same relationship
        let db = create_slice_instance(&slice, &meta, "check").unwrap();
        let again = introspect_schema(&db).unwrap();
        assert_eq!(again.foreign_keys, meta.foreign_keys);
        assert_eq!(SchemaSlice::full(&again), slice);

        let partial = SchemaSlice::validated(vec![entry("member", &["member_id", "club"])], &meta).unwrap();
        assert!(!synthesize_ddl(&partial, &meta).unwrap()[0].contains("FOREIGN KEY"));
    }

    #[test]
    fn dry_run_checks_references() {
        let meta = introspect_schema(&memory_with(CLUB)).unwrap();
        let both = SchemaSlice::validated(vec![entry("club", &["club_id", "title"]), entry("member", &["name", "club"])], &meta).unwrap();
        let q1 = "SELECT m.name FROM member m JOIN club c ON m.club = c.club_id";
        let q2 = "SELECT c.title FROM club c";
        assert!(dry_run(&both, &meta, &[q1, q2]).unwrap().iter().all(ExecOutcome::is_ok));

        let no_club = SchemaSlice::validated(vec![entry("member", &["name", "club"])], &meta).unwrap();
        let out = dry_run(&no_club, &meta, &[q1]).unwrap();
        assert!(out[0].error_message().unwrap().contains("club"), "{out:?}");

        // FK target column missing from the slice is fine if the SQL does not use it
        let slim = SchemaSlice::validated(vec![entry("member", &["name"])], &meta).unwrap();
        assert!(dry_run(&slim, &meta, &["SELECT name FROM member"]).unwrap()[0].is_ok());
    }

    fn rows(v: serde_json::Value) -> Vec<serde_json::Map<String, serde_json::Value>> {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn materialize_orders_parents_first_and_enforces_fks() {
        let meta = introspect_schema(&memory_with(CLUB)).unwrap();
        let slice = SchemaSlice::full(&meta);
        let mut data = TestData::default();
        // child listed first alphabetically: "club" < "member" anyway, so use
        // the data map order to make sure it is not what drives insertion
        data.tables.insert("member".into(), rows(serde_json::json!([{"member_id": "m1", "club": 7}])));
        data.tables.insert("club".into(), rows(serde_json::json!([{"club_id": 7, "title": "chess"}])));
        let db = materialize_mdd(&slice, &meta, &data).unwrap();
        let rs = execute_sql(&db, "SELECT title FROM member JOIN club ON club = club_id", 1000).result.unwrap();
        assert_eq!(rs.len(), 1);

        data.tables.insert("member".into(), rows(serde_json::json!([{"member_id": "m1", "club": 8}])));
        let err = materialize_mdd(&slice, &meta, &data).unwrap_err();
        assert!(err.to_string().contains("FOREIGN KEY constraint failed"), "{err}");
    }

    #[test]
    fn materialize_errors_and_empty() {
        let meta = introspect_schema(&memory_with(CLUB)).unwrap();
        let slice = SchemaSlice::validated(vec![entry("club", &["club_id"])], &meta).unwrap();
        let mut data = TestData::default();
        data.tables.insert("member".into(), rows(serde_json::json!([{"member_id": "x"}])));
        assert_eq!(materialize_mdd(&slice, &meta, &data).unwrap_err(), MaterializeError::UnknownTable("member".into()));

        let db = materialize_mdd(&slice, &meta, &TestData::default()).unwrap();
        assert!(execute_sql(&db, "SELECT * FROM club", 1000).result.unwrap().is_empty());

        let mut dup = TestData::default();
        dup.tables.insert("club".into(), rows(serde_json::json!([{"club_id": 1}, {"club_id": 1}])));
        let err = materialize_mdd(&slice, &meta, &dup).unwrap_err();
        assert!(matches!(&err, MaterializeError::Insert { row: 1, .. }), "{err}");
    }

    #[test]
    fn materialize_is_deterministic() {
        let meta = introspect_schema(&memory_with(CLUB)).unwrap();
        let slice = SchemaSlice::full(&meta);
        let mut data = TestData::default();
        data.tables.insert("club".into(), rows(serde_json::json!([{"club_id": 1, "title": "a"}, {"club_id": 2, "title": null}])));
        data.tables.insert("member".into(), rows(serde_json::json!([{"member_id": "m", "club": 2, "joined": "2020-01-02"}])));
        let a = materialize_mdd(&slice, &meta, &data).unwrap();
        let b = materialize_mdd(&slice, &meta, &data).unwrap();
        assert_eq!(introspect_schema(&a).unwrap(), introspect_schema(&b).unwrap());
        for t in ["club", "member"] {
            let q = format!("SELECT * FROM {t}");
            assert_eq!(
                mdd_select_core::canonicalize(&execute_sql(&a, &q, 1000).result.unwrap()),
                mdd_select_core::canonicalize(&execute_sql(&b, &q, 1000).result.unwrap())
            );
        }
    }

    #[test]
    fn readonly_open_refuses_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sqlite");
        Database::open_writable(&path).unwrap().execute_batch("CREATE TABLE t (a); INSERT INTO t VALUES (1);").unwrap();
        let ro = Database::open_readonly(&path).unwrap();
        assert!(ro.execute_batch("INSERT INTO t VALUES (2)").is_err());
        assert!(matches!(Database::open_readonly(dir.path().join("nope.sqlite")), Err(SqlError::Unreadable { .. })));
        std::fs::write(dir.path().join("junk.sqlite"), b"not a database at all, just some text padding here").unwrap();
        assert!(matches!(Database::open_readonly(dir.path().join("junk.sqlite")), Err(SqlError::Unreadable { .. })));
    }
}
