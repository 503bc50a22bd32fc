use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mdd_select::clustering::{cluster_candidates, ClusterSummary};
use mdd_select::executor::{CannedOutcome, MockExecutor, ProcessExecutor, ScriptExecutor};
use mdd_select::harness::{load_benchmark, run_benchmark, BaselineKind, SourceFormat};
use mdd_select::llm::{OpenAiProvider, Provider, ProviderConfig, ScriptFile, ScriptedProvider};
use mdd_select::pipeline::PipelineConfig;
use mdd_select::sqlite::{Database, DEFAULT_SQL_TIMEOUT_MS};
use mdd_select::{fixtures, harness};
use mdd_select_core::{bsf1, DuelSelection, ResultSet};

const EXIT_INFRA: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "mdd-select", version, about = "Select one SQL query from a candidate pool by synthesizing a distinguishing test database")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run selection over a benchmark file.
    Run(RunArgs),
    /// Score two result-set JSON files with BS-F1.
    Bsf1 {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
    /// Print the execution clusters of every item.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SQL_TIMEOUT_MS)]
        sql_timeout_ms: u64,
    },
    /// Convert an official BIRD or Spider file plus candidates into benchmark lines.
    Convert {
        #[arg(long)]
        format: SourceFormat,
        /// Dataset JSON (a list of question records).
        #[arg(long)]
        dataset: PathBuf,
        /// JSON object mapping question id to a list of candidate SQL.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the bundled demo database and benchmark.
    FixtureDb {
        #[arg(long)]
        db_root: PathBuf,
        /// Also write the demo benchmark and case-study scripts into this directory.
        #[arg(long)]
        demo_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    db_root: PathBuf,
    /// Chat-completions base URL, or `script:<file>` for canned responses.
    #[arg(long)]
    provider: String,
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 3)]
    t_max: u32,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of sc, eg, random.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<BaselineKind>,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Script runner command line, or `mock:<file>` for canned outcomes.
    #[arg(long, env = "MDD_SELECT_EXECUTOR", default_value = "python3 -m sandbox_runner")]
    executor: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = DEFAULT_SQL_TIMEOUT_MS)]
    sql_timeout_ms: u64,
    #[arg(long, default_value_t = mdd_select::executor::DEFAULT_SCRIPT_TIMEOUT_MS)]
    script_timeout_ms: u64,
    #[arg(long, default_value_t = 400_000)]
    context_budget_chars: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_provider(args: &RunArgs) -> Result<Box<dyn Provider>> {
    if let Some(path) = args.provider.strip_prefix("script:") {
        let script: ScriptFile = read_json(Path::new(path))?;
        return Ok(Box::new(ScriptedProvider::from_script(script)));
    }
    let config = ProviderConfig {
        endpoint_url: args.provider.clone(),
        api_key_env_var: args.api_key_env.clone(),
        model: args.model.clone(),
        ..ProviderConfig::default()
    };
    Ok(Box::new(OpenAiProvider::new(&config)?))
}

fn build_executor(args: &RunArgs) -> Result<Box<dyn ScriptExecutor>> {
    if let Some(path) = args.executor.strip_prefix("mock:") {
        let canned: BTreeMap<String, CannedOutcome> = read_json(Path::new(path))?;
        return Ok(Box::new(MockExecutor::from_canned(canned)));
    }
    match ProcessExecutor::from_command_line(&args.executor, args.workers.max(1)) {
        Some(ex) => Ok(Box::new(ex)),
        None => bail!("--executor is empty"),
    }
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let config = PipelineConfig {
        t_max: args.t_max,
        temperature: args.temperature,
        model: args.model.clone(),
        sql_timeout_ms: args.sql_timeout_ms,
        script_timeout_ms: args.script_timeout_ms,
        context_budget_chars: args.context_budget_chars,
        worker_count: args.workers,
        seed: args.seed,
    };
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let bench = load_benchmark(&args.input, &args.db_root).with_context(|| format!("reading {}", args.input.display()))?;
    for e in &bench.errors {
        log::error!("{}:{}: {}", args.input.display(), e.line, e.message);
    }
    let provider = build_provider(&args)?;
    let executor = build_executor(&args)?;
    let mut baselines = args.baselines.clone();
    baselines.sort();
    baselines.dedup();
    let report = run_benchmark(&bench, &config, provider.as_ref(), executor.as_ref(), &baselines);
    let mut out = writer(args.output.as_deref())?;
    for rec in &report.records {
        serde_json::to_writer(&mut out, rec)?;
        writeln!(out)?;
    }
    serde_json::to_writer(
        &mut out,
        &serde_json::json!({ "aggregate": report.aggregate, "input_errors": bench.errors }),
    )?;
    writeln!(out)?;
    out.flush()?;
    let agg = &report.aggregate;
    log::info!(
        "{} items, EX {:?}%, Pass@N {:?}%, {} infrastructure failures",
        agg.items,
        agg.ex_percent,
        agg.pass_at_n_percent,
        agg.infrastructure_failures
    );
    Ok(if agg.infrastructure_failures > 0 || !bench.errors.is_empty() {
        ExitCode::from(EXIT_INFRA)
    } else {
        ExitCode::SUCCESS
    })
}

fn cluster(input: &Path, db_root: &Path, timeout_ms: u64) -> Result<ExitCode> {
    let bench = load_benchmark(input, db_root).with_context(|| format!("reading {}", input.display()))?;
    let mut failed = !bench.errors.is_empty();
    for e in &bench.errors {
        log::error!("{}:{}: {}", input.display(), e.line, e.message);
    }
    let mut out = writer(None)?;
    for li in &bench.items {
        let Some(path) = &li.db_path else {
            log::error!("question {}: no database file for db_id '{}'", li.item.question_id, li.item.db_id);
            failed = true;
            continue;
        };
        let db = Database::open_readonly(path)?;
        let c = cluster_candidates(&db, &li.item.candidates, timeout_ms);
        let clusters: Vec<ClusterSummary> = c.clusters.iter().map(ClusterSummary::from).collect();
        let line = serde_json::json!({
            "question_id": li.item.question_id,
            "clusters": clusters,
            "majority_index": c.majority(),
            "duel": match &c.selection {
                DuelSelection::Duel(pair) => Some(pair),
                _ => None,
            },
            "outcomes": c.outcomes,
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(if failed { ExitCode::from(EXIT_INFRA) } else { ExitCode::SUCCESS })
}

fn convert(format: SourceFormat, dataset: &Path, candidates: &Path, output: Option<&Path>) -> Result<ExitCode> {
    let ds = fs::read_to_string(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let cands = fs::read_to_string(candidates).with_context(|| format!("reading {}", candidates.display()))?;
    let (items, skipped) = harness::convert(format, &ds, &cands).map_err(anyhow::Error::msg)?;
    if !skipped.is_empty() {
        log::warn!("{} questions have no candidates and were skipped", skipped.len());
    }
    let mut out = writer(output)?;
    for item in &items {
        serde_json::to_writer(&mut out, item)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn fixture_db(db_root: &Path, demo_dir: Option<&Path>) -> Result<ExitCode> {
    let path = fixtures::write_debit_card_db(db_root)?;
    println!("{}", path.display());
    if let Some(dir) = demo_dir {
        fs::create_dir_all(dir)?;
        let files = [
            ("bench.jsonl", fixtures::MINI_BENCH_JSONL.to_string()),
            ("case_study.jsonl", format!("{}\n", fixtures::MINI_BENCH_JSONL.lines().next().unwrap_or_default())),
            ("provider_script.json", serde_json::to_string_pretty(&fixtures::case_study_script())?),
            ("executor_mock.json", fixtures::case_study_executor_json()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
            println!("{}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Bsf1 { left, right } => (|| {
            let l: ResultSet = read_json(&left)?;
            let r: ResultSet = read_json(&right)?;
            println!("{}", serde_json::to_string(&bsf1(&l, &r))?);
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Cluster { input, db_root, sql_timeout_ms } => cluster(&input, &db_root, sql_timeout_ms),
        Command::Convert { format, dataset, candidates, output } => {
            convert(format, &dataset, &candidates, output.as_deref())
        }
        Command::FixtureDb { db_root, demo_dir } => fixture_db(&db_root, demo_dir.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}
