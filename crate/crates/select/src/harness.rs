//! Benchmark ingestion, baseline selectors, EX / Pass@N and run reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mdd_select_core::{canonicalize, CanonicalForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::clustering::{cluster_candidates, CandidateSet, Clustering};
use crate::executor::ScriptExecutor;
use crate::llm::Provider;
use crate::pipeline::{select_on, PipelineConfig, Verdict};
use crate::sqlite::{execute_sql, Database};
use crate::tester::stable_hash;

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("expected a string or number, found {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    #[serde(deserialize_with = "string_or_number")]
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: Option<String>,
    pub db_id: String,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub gold_sql: Option<String>,
}

impl BenchmarkItem {
    pub fn candidate_set(&self) -> CandidateSet {
        CandidateSet {
            question_id: self.question_id.clone(),
            question: self.question.clone(),
            evidence: self.evidence.clone(),
            candidates: self.candidates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedItem {
    pub item: BenchmarkItem,
    /// `None` when no database file exists for `db_id`.
    pub db_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Benchmark {
    pub items: Vec<LoadedItem>,
    pub errors: Vec<LineError>,
}

/// `<root>/<db_id>/<db_id>.sqlite` (BIRD/Spider layout) or `<root>/<db_id>.sqlite`.
pub fn resolve_db(db_root: &Path, db_id: &str) -> Option<PathBuf> {
    [db_root.join(db_id).join(format!("{db_id}.sqlite")), db_root.join(format!("{db_id}.sqlite"))]
        .into_iter()
        .find(|p| p.is_file())
}

/// Parses line-delimited items; bad lines are reported, not fatal.
pub fn parse_benchmark(text: &str, db_root: &Path) -> Benchmark {
    let mut out = Benchmark::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        match serde_json::from_str::<BenchmarkItem>(line) {
            Ok(item) if item.candidates.is_empty() => {
                out.errors.push(LineError { line: line_no, message: "item has no candidates".into() })
            }
            Ok(item) => {
                let db_path = resolve_db(db_root, &item.db_id);
                out.items.push(LoadedItem { item, db_path });
            }
            Err(e) => out.errors.push(LineError { line: line_no, message: e.to_string() }),
        }
    }
    out
}

pub fn load_benchmark(path: &Path, db_root: &Path) -> std::io::Result<Benchmark> {
    Ok(parse_benchmark(&std::fs::read_to_string(path)?, db_root))
}

/// `None` when the gold query itself fails (the item leaves the EX denominator).
pub fn ex_match(pred_sql: &str, gold_sql: &str, db: &Database, timeout_ms: u64) -> Option<bool> {
    let gold = execute_sql(db, gold_sql, timeout_ms).result.ok()?;
    Some(match execute_sql(db, pred_sql, timeout_ms).result {
        Ok(pred) => canonicalize(&pred) == canonicalize(&gold),
        Err(_) => false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    ExecutionGuided,
    SelfConsistency,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::ExecutionGuided => "eg",
            BaselineKind::SelfConsistency => "sc",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(BaselineKind::Random),
            "eg" | "execution_guided" => Ok(BaselineKind::ExecutionGuided),
            "sc" | "self_consistency" => Ok(BaselineKind::SelfConsistency),
            other => Err(format!("unknown baseline '{other}'; expected sc, eg or random")),
        }
    }
}

pub fn baseline_select(kind: BaselineKind, clustering: &Clustering, question_id: &str, seed: u64) -> usize {
    match kind {
        BaselineKind::Random => {
            let n = clustering.outcomes.len().max(1);
            ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&[question_id])).random_range(0..n)
        }
        BaselineKind::ExecutionGuided => clustering.outcomes.iter().position(|o| o.is_ok()).unwrap_or(0),
        BaselineKind::SelfConsistency => clustering.majority(),
    }
}

/// Gold canonical form and the indices of EX-correct candidates.
struct GoldCheck {
    gold: Option<CanonicalForm>,
    correct: Vec<bool>,
}

fn check_gold(db: &Database, gold_sql: &str, clustering: &Clustering, timeout_ms: u64) -> GoldCheck {
    let gold = execute_sql(db, gold_sql, timeout_ms).result.ok().map(|rs| canonicalize(&rs));
    let correct = clustering
        .outcomes
        .iter()
        .map(|o| match (&gold, &o.result) {
            (Some(g), Ok(rs)) => canonicalize(rs) == *g,
            _ => false,
        })
        .collect();
    GoldCheck { gold, correct }
}

/// Percentage of gold-bearing, runnable items where any candidate matches gold.
pub fn pass_at_n(items: &[LoadedItem], timeout_ms: u64) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for li in items {
        let (Some(gold), Some(path)) = (&li.item.gold_sql, &li.db_path) else { continue };
        let Ok(db) = Database::open_readonly(path) else { continue };
        let clustering = cluster_candidates(&db, &li.item.candidates, timeout_ms);
        let check = check_gold(&db, gold, &clustering, timeout_ms);
        if check.gold.is_none() {
            continue;
        }
        total += 1;
        hits += usize::from(check.correct.iter().any(|&c| c));
    }
    percent(hits, total).unwrap_or(0.0)
}

fn percent(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRecord {
    pub index: usize,
    pub ex_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemRecord {
    pub question_id: String,
    pub db_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Infrastructure failure that prevented a verdict.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// `None` without gold, or when gold fails to execute.
    pub ex_correct: Option<bool>,
    pub pass_at_n: Option<bool>,
    pub gold_failed: bool,
    pub baselines: BTreeMap<String, BaselineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub items: usize,
    pub infrastructure_failures: usize,
    pub gold_failures: usize,
    pub ex_denominator: usize,
    pub ex_percent: Option<f64>,
    pub pass_at_n_percent: Option<f64>,
    pub mean_tokens: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub baseline_ex_percent: BTreeMap<String, Option<f64>>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub records: Vec<ItemRecord>,
    pub aggregate: Aggregate,
}

/// Aggregates are a pure function of the per-item records.
pub fn aggregate(records: &[ItemRecord], config: &PipelineConfig) -> Aggregate {
    let scored: Vec<&ItemRecord> = records.iter().filter(|r| r.pass_at_n.is_some()).collect();
    let count = |f: &dyn Fn(&ItemRecord) -> bool| scored.iter().filter(|r| f(r)).count();
    let verdicts: Vec<&Verdict> = records.iter().filter_map(|r| r.verdict.as_ref()).collect();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut labels: Vec<&String> = records.iter().flat_map(|r| r.baselines.keys()).collect();
    labels.sort();
    labels.dedup();
    Aggregate {
        items: records.len(),
        infrastructure_failures: records.iter().filter(|r| r.error.is_some()).count(),
        gold_failures: records.iter().filter(|r| r.gold_failed).count(),
        ex_denominator: scored.len(),
        ex_percent: percent(count(&|r| r.ex_correct == Some(true)), scored.len()),
        pass_at_n_percent: percent(count(&|r| r.pass_at_n == Some(true)), scored.len()),
        mean_tokens: mean(
            verdicts.iter().map(|v| (v.usage.total_prompt_tokens + v.usage.total_completion_tokens) as f64).collect(),
        ),
        mean_latency_ms: mean(verdicts.iter().map(|v| v.usage.wall_ms as f64).collect()),
        baseline_ex_percent: labels
            .into_iter()
            .map(|l| {
                let hits = count(&|r| r.baselines.get(l).and_then(|b| b.ex_correct) == Some(true));
                (l.clone(), percent(hits, scored.len()))
            })
            .collect(),
        config: config.clone(),
    }
}

fn run_item(
    li: &LoadedItem,
    config: &PipelineConfig,
    provider: &dyn Provider,
    executor: &dyn ScriptExecutor,
    baselines: &[BaselineKind],
) -> ItemRecord {
    let item = &li.item;
    let mut rec = ItemRecord {
        question_id: item.question_id.clone(),
        db_id: item.db_id.clone(),
        verdict: None,
        error: None,
        ex_correct: None,
        pass_at_n: None,
        gold_failed: false,
        baselines: BTreeMap::new(),
    };
    let Some(path) = &li.db_path else {
        rec.error = Some(format!("no database file for db_id '{}'", item.db_id));
        return rec;
    };
    let db = match Database::open_readonly(path) {
        Ok(db) => db,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let clustering = cluster_candidates(&db, &item.candidates, config.sql_timeout_ms);
    let gold = item.gold_sql.as_deref().map(|g| check_gold(&db, g, &clustering, config.sql_timeout_ms));
    let scored = gold.as_ref().filter(|g| g.gold.is_some());
    rec.gold_failed = gold.as_ref().is_some_and(|g| g.gold.is_none());
    rec.pass_at_n = scored.map(|g| g.correct.iter().any(|&c| c));
    for &kind in baselines {
        let index = baseline_select(kind, &clustering, &item.question_id, config.seed);
        rec.baselines.insert(
            kind.label().to_string(),
            BaselineRecord { index, ex_correct: scored.map(|g| g.correct[index]) },
        );
    }
    match select_on(&item.candidate_set(), &db, config, provider, executor) {
        Ok(v) => {
            rec.ex_correct = scored.map(|g| g.correct[v.selected_index]);
            rec.verdict = Some(v);
        }
        Err(e) => {
            log::error!("question {}: {e}", item.question_id);
            rec.error = Some(e.to_string());
            rec.ex_correct = scored.map(|_| false);
        }
    }
    rec
}

/// Runs every item on a pool of `config.worker_count` threads; records keep input order.
pub fn run_benchmark(
    bench: &Benchmark,
    config: &PipelineConfig,
    provider: &dyn Provider,
    executor: &dyn ScriptExecutor,
    baselines: &[BaselineKind],
) -> RunReport {
    let n = bench.items.len();
    let slots: Mutex<Vec<Option<ItemRecord>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.worker_count.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let rec = run_item(&bench.items[i], config, provider, executor, baselines);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(rec);
            });
        }
    });
    let records: Vec<ItemRecord> = slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect();
    let aggregate = aggregate(&records, config);
    RunReport { records, aggregate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Bird,
    Spider,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bird" => Ok(SourceFormat::Bird),
            "spider" => Ok(SourceFormat::Spider),
            other => Err(format!("unknown format '{other}'; expected bird or spider")),
        }
    }
}

#[derive(Deserialize)]
struct BirdRecord {
    #[serde(deserialize_with = "string_or_number")]
    question_id: String,
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(rename = "SQL", default)]
    sql: Option<String>,
}

#[derive(Deserialize)]
struct SpiderRecord {
    db_id: String,
    question: String,
    #[serde(default)]
    query: Option<String>,
}

/// Converts an official dataset file plus a `{question_id: [sql, ..]}`
/// candidates map into benchmark items. Spider items are identified by
/// their position in the file. Returns the items and the ids skipped for
/// lack of candidates.
pub fn convert(
    format: SourceFormat,
    dataset_json: &str,
    candidates_json: &str,
) -> Result<(Vec<BenchmarkItem>, Vec<String>), String> {
    let candidates: BTreeMap<String, Vec<String>> =
        serde_json::from_str(candidates_json).map_err(|e| format!("candidates file: {e}"))?;
    let base: Vec<BenchmarkItem> = match format {
        SourceFormat::Bird => serde_json::from_str::<Vec<BirdRecord>>(dataset_json)
            .map_err(|e| format!("dataset file: {e}"))?
            .into_iter()
            .map(|r| BenchmarkItem {
                question_id: r.question_id,
                question: r.question,
                evidence: r.evidence.filter(|e| !e.trim().is_empty()),
                db_id: r.db_id,
                candidates: Vec::new(),
                gold_sql: r.sql,
            })
            .collect(),
        SourceFormat::Spider => serde_json::from_str::<Vec<SpiderRecord>>(dataset_json)
            .map_err(|e| format!("dataset file: {e}"))?
            .into_iter()
            .enumerate()
            .map(|(i, r)| BenchmarkItem {
                question_id: i.to_string(),
                question: r.question,
                evidence: None,
                db_id: r.db_id,
                candidates: Vec::new(),
                gold_sql: r.query,
            })
            .collect(),
    };
    let mut items = Vec::with_capacity(base.len());
    let mut skipped = Vec::new();
    for mut item in base {
        match candidates.get(&item.question_id) {
            Some(c) if !c.is_empty() => {
                item.candidates = c.clone();
                items.push(item);
            }
            _ => skipped.push(item.question_id),
        }
    }
    Ok((items, skipped))
}
