//! Canonical representation of execution results.
//!
//! Cells coming out of SQLite and out of the script runner differ in
//! representation (`DECIMAL` vs float, `NULL` vs `NaN`, padded strings,
//! timestamps). [`normalize_value`] maps all of them onto [`AtomicValue`], and
//! every comparison in the selector goes through that normalized form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write as _;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// An untyped cell as produced by an executor, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum RawCell {
    Null,
    Bool(bool),
    Integer(i64),
    Float(f64),
    /// Decimal in textual form, e.g. `"12.34500"`.
    Decimal(String),
    /// Date, datetime or timestamp text, e.g. `"2019-09-09T00:00:00"`.
    DateTime(String),
    Text(String),
}

/// A normalized cell value.
#[derive(Debug, Clone)]
pub enum AtomicValue {
    Null,
    Integer(i64),
    /// Always finite and rounded to 4 decimal places.
    Float(f64),
    Text(String),
    /// Always `YYYY-MM-DD`.
    Date(String),
}

impl AtomicValue {
    /// Re-applies normalization; a no-op on values produced by [`normalize_value`].
    pub fn normalized(&self) -> AtomicValue {
        normalize_value(RawCell::from(self.clone()))
    }

    fn key(&self) -> CellKey<'_> {
        match self {
            AtomicValue::Null => CellKey::Null,
            AtomicValue::Integer(n) => CellKey::Int(*n),
            AtomicValue::Float(f) => match integral_float(*f) {
                Some(n) => CellKey::Int(n),
                None => CellKey::Float(f.to_bits()),
            },
            AtomicValue::Text(s) | AtomicValue::Date(s) => CellKey::Str(s),
        }
    }

    /// Deterministic, unambiguous serialization of the equality key.
    fn write_canonical(&self, out: &mut String) {
        match self.key() {
            CellKey::Null => out.push('n'),
            CellKey::Int(n) => {
                let _ = write!(out, "i{n};");
            }
            CellKey::Float(bits) => {
                let _ = write!(out, "f{};", f64::from_bits(bits));
            }
            CellKey::Str(s) => {
                let _ = write!(out, "s{}:{s}", s.len());
            }
        }
    }
}

impl PartialEq for AtomicValue {
    fn eq(&self, other: &Self) -> bool {
        values_equal(self, other)
    }
}

impl From<AtomicValue> for RawCell {
    fn from(v: AtomicValue) -> Self {
        match v {
            AtomicValue::Null => RawCell::Null,
            AtomicValue::Integer(n) => RawCell::Integer(n),
            AtomicValue::Float(f) => RawCell::Float(f),
            AtomicValue::Text(s) => RawCell::Text(s),
            AtomicValue::Date(s) => RawCell::DateTime(s),
        }
    }
}

#[derive(PartialEq, Eq)]
enum CellKey<'a> {
    Null,
    Int(i64),
    Float(u64),
    Str(&'a str),
}

/// `Some(n)` when `f` is an integer representable as `i64`.
fn integral_float(f: f64) -> Option<i64> {
    // 2^63 is exactly representable; anything at or beyond it overflows i64.
    const LIMIT: f64 = 9_223_372_036_854_775_808.0;
    if f % 1.0 == 0.0 && (-LIMIT..LIMIT).contains(&f) {
        Some(f as i64)
    } else {
        None
    }
}

/// Normalizes one raw cell.
///
/// Rules, in order: numbers become floats rounded half-away-from-zero to 4
/// decimals; datetimes collapse to `YYYY-MM-DD`; `NULL`, `NaN` and the text
/// `"null"` (any casing, surrounding whitespace ignored) become `Null`; text is
/// stripped. Integers stay integers but compare equal to floats of the same
/// value (see [`values_equal`]).
pub fn normalize_value(raw: RawCell) -> AtomicValue {
    match raw {
        RawCell::Null => AtomicValue::Null,
        RawCell::Bool(b) => AtomicValue::Integer(b as i64),
        RawCell::Integer(n) => AtomicValue::Integer(n),
        RawCell::Float(f) => normalize_float(f),
        RawCell::Decimal(s) => {
            let t = s.trim();
            if is_plain_decimal(t) {
                match round_plain_decimal(t) {
                    Some(f) => normalize_float(f),
                    None => normalize_text(&s),
                }
            } else {
                match t.parse::<f64>() {
                    Ok(f) => normalize_float(f),
                    Err(_) => normalize_text(&s),
                }
            }
        }
        RawCell::DateTime(s) => match date_part(s.trim()) {
            Some(d) => AtomicValue::Date(d.to_string()),
            None => normalize_text(&s),
        },
        RawCell::Text(s) => normalize_text(&s),
    }
}

fn normalize_float(f: f64) -> AtomicValue {
    if !f.is_finite() {
        return AtomicValue::Null;
    }
    let shortest = format!("{f}");
    match round_plain_decimal(&shortest) {
        Some(r) => AtomicValue::Float(r),
        None => AtomicValue::Null,
    }
}

fn normalize_text(s: &str) -> AtomicValue {
    let t = s.trim();
    if t.eq_ignore_ascii_case("null") {
        AtomicValue::Null
    } else {
        AtomicValue::Text(t.to_string())
    }
}

/// `-?digits(.digits)?`, the format `f64`'s `Display` produces.
fn is_plain_decimal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => (!int.is_empty() || !f.is_empty()) && digits(int) && digits(f),
    }
}

/// Rounds a plain decimal string half-away-from-zero at the 4th fractional
/// digit, doing the carry in decimal so that e.g. `1.00005` rounds up even
/// though its nearest binary double sits slightly below it.
fn round_plain_decimal(s: &str) -> Option<f64> {
    let (neg, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if frac.len() <= 4 {
        return s.parse::<f64>().ok();
    }
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().take(4)).collect();
    let int_len = int.len();
    if frac.as_bytes()[4] >= b'5' {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 4;
    debug_assert!(split >= int_len);
    let mut out = String::with_capacity(digits.len() + 2);
    if neg {
        out.push('-');
    }
    for &d in &digits[..split] {
        out.push(d as char);
    }
    if split == 0 {
        out.push('0');
    }
    out.push('.');
    for &d in &digits[split..] {
        out.push(d as char);
    }
    out.parse::<f64>().ok()
}

/// Extracts `YYYY-MM-DD` from a date or datetime string.
fn date_part(s: &str) -> Option<&str> {
    let b = s.as_bytes();
    if b.len() < 10 {
        return None;
    }
    let shape_ok = b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..7].iter().all(u8::is_ascii_digit)
        && b[7] == b'-'
        && b[8..10].iter().all(u8::is_ascii_digit);
    if !shape_ok {
        return None;
    }
    let month = (b[5] - b'0') * 10 + (b[6] - b'0');
    let day = (b[8] - b'0') * 10 + (b[9] - b'0');
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    match b.get(10) {
        None | Some(b'T') | Some(b't') | Some(b' ') => Some(&s[..10]),
        _ => None,
    }
}

/// Equality on normalized values.
///
/// `Null == Null`; integers equal floats of the same value; text and dates
/// compare by their (stripped, case-sensitive) string.
pub fn values_equal(a: &AtomicValue, b: &AtomicValue) -> bool {
    a.key() == b.key()
}

/// One result row; cell order is preserved as produced by the executor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row(pub Vec<AtomicValue>);

impl Row {
    pub fn cells(&self) -> &[AtomicValue] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn canonical_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{}|", self.0.len());
        for c in &self.0 {
            c.write_canonical(&mut s);
        }
        s
    }
}

impl From<Vec<AtomicValue>> for Row {
    fn from(cells: Vec<AtomicValue>) -> Self {
        Row(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResultSetError {
    #[error("row {row} has {found} cells but {expected} columns are declared")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// An ordered list of rows plus optional column labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    columns: Option<Vec<String>>,
    rows: Vec<Row>,
}

impl ResultSet {
    /// Builds a result set, normalizing every cell.
    pub fn new(columns: Option<Vec<String>>, rows: Vec<Row>) -> Result<Self, ResultSetError> {
        if let Some(cols) = &columns {
            for (i, r) in rows.iter().enumerate() {
                if r.len() != cols.len() {
                    return Err(ResultSetError::RaggedRow {
                        row: i,
                        expected: cols.len(),
                        found: r.len(),
                    });
                }
            }
        }
        let rows = rows
            .into_iter()
            .map(|r| Row(r.0.iter().map(AtomicValue::normalized).collect()))
            .collect();
        Ok(ResultSet { columns, rows })
    }

    pub fn from_raw(
        columns: Option<Vec<String>>,
        rows: Vec<Vec<RawCell>>,
    ) -> Result<Self, ResultSetError> {
        let rows = rows
            .into_iter()
            .map(|r| Row(r.into_iter().map(normalize_value).collect()))
            .collect();
        Self::new(columns, rows)
    }

    /// A result set without column labels.
    pub fn from_rows(rows: Vec<Row>) -> Self {
        Self::new(None, rows).expect("unlabelled rows are never ragged")
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn columns(&self) -> Option<&[String]> {
        self.columns.as_deref()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy with every cell normalized again.
    pub fn normalized(&self) -> ResultSet {
        ResultSet {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| Row(r.0.iter().map(AtomicValue::normalized).collect()))
                .collect(),
        }
    }
}

/// Deterministic serialization of a normalized, row-sorted result set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalForm(String);

impl CanonicalForm {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

/// Row-order-insensitive canonical form. Column labels are not part of it.
pub fn canonicalize(rs: &ResultSet) -> CanonicalForm {
    let mut lines: Vec<String> = rs
        .rows
        .iter()
        .map(|r| Row(r.0.iter().map(AtomicValue::normalized).collect()).canonical_line())
        .collect();
    lines.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    let mut out = format!("rows={}\n", lines.len());
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    CanonicalForm(out)
}

// ---------------------------------------------------------------------------
// JSON: {"columns": [...]|null, "rows": [[cell, ...], ...]}

impl Serialize for AtomicValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AtomicValue::Null => s.serialize_none(),
            AtomicValue::Integer(n) => s.serialize_i64(*n),
            AtomicValue::Float(f) => s.serialize_f64(*f),
            AtomicValue::Text(t) | AtomicValue::Date(t) => s.serialize_str(t),
        }
    }
}

struct CellVisitor;

impl<'de> Visitor<'de> for CellVisitor {
    type Value = RawCell;

    fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
        f.write_str("a JSON null, boolean, number or string")
    }

    fn visit_unit<E: de::Error>(self) -> Result<RawCell, E> {
        Ok(RawCell::Null)
    }

    fn visit_none<E: de::Error>(self) -> Result<RawCell, E> {
        Ok(RawCell::Null)
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<RawCell, E> {
        Ok(RawCell::Bool(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<RawCell, E> {
        Ok(RawCell::Integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<RawCell, E> {
        Ok(match i64::try_from(v) {
            Ok(n) => RawCell::Integer(n),
            Err(_) => RawCell::Float(v as f64),
        })
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<RawCell, E> {
        Ok(RawCell::Float(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<RawCell, E> {
        Ok(RawCell::Text(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<RawCell, E> {
        Ok(RawCell::Text(v))
    }
}

impl<'de> Deserialize<'de> for RawCell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(CellVisitor)
    }
}

impl<'de> Deserialize<'de> for AtomicValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RawCell::deserialize(d).map(normalize_value)
    }
}

#[derive(Serialize)]
struct ResultSetRef<'a> {
    columns: Option<&'a [String]>,
    rows: &'a [Row],
}

#[derive(Deserialize)]
struct ResultSetWire {
    #[serde(default)]
    columns: Option<Vec<String>>,
    rows: Vec<Vec<RawCell>>,
}

impl Serialize for Row {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl Serialize for ResultSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ResultSetRef {
            columns: self.columns.as_deref(),
            rows: &self.rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResultSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = ResultSetWire::deserialize(d)?;
        ResultSet::from_raw(wire.columns, wire.rows).map_err(de::Error::custom)
    }
}

impl PartialOrd for CellKey<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CellKey<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        fn rank(k: &CellKey<'_>) -> u8 {
            match k {
                CellKey::Null => 0,
                CellKey::Int(_) => 1,
                CellKey::Float(_) => 2,
                CellKey::Str(_) => 3,
            }
        }
        match (self, other) {
            (CellKey::Int(a), CellKey::Int(b)) => a.cmp(b),
            (CellKey::Float(a), CellKey::Float(b)) => a.cmp(b),
            (CellKey::Str(a), CellKey::Str(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

/// Counts of equality classes in a row, used for multiset cell matching.
pub(crate) fn cell_class_counts(row: &Row) -> alloc::collections::BTreeMap<CellKeyOwned, usize> {
    let mut m = alloc::collections::BTreeMap::new();
    for c in &row.0 {
        *m.entry(CellKeyOwned::of(c)).or_insert(0) += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum CellKeyOwned {
    Null,
    Int(i64),
    Float(u64),
    Str(String),
}

impl CellKeyOwned {
    fn of(v: &AtomicValue) -> Self {
        match v.key() {
            CellKey::Null => CellKeyOwned::Null,
            CellKey::Int(n) => CellKeyOwned::Int(n),
            CellKey::Float(b) => CellKeyOwned::Float(b),
            CellKey::Str(s) => CellKeyOwned::Str(s.to_string()),
        }
    }
}
