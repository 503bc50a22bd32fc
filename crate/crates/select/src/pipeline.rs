//! Per-question orchestration: cluster, slice, synthesize, solve, score.

use std::path::Path;
use std::time::Instant;

use mdd_select_core::{verdict, BsF1Score, DuelPair, DuelReason, DuelSelection, ResultSet, SchemaSlice};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentFailure, AgentSettings, AgentTrace};
use crate::clustering::{cluster_candidates, CandidateSet, ClusterSummary};
use crate::executor::{ScriptExecutor, DEFAULT_SCRIPT_TIMEOUT_MS};
use crate::llm::{Provider, ProviderError, DEFAULT_TEMPERATURE};
use crate::slicer::run_slicer;
use crate::solver::{run_solver, SolverRequest};
use crate::sqlite::{introspect_schema, Database, SqlError, DEFAULT_SQL_TIMEOUT_MS};
use crate::tester::{run_tester, sample_value_hints, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub t_max: u32,
    pub temperature: f64,
    pub model: String,
    pub sql_timeout_ms: u64,
    pub script_timeout_ms: u64,
    /// Characters allowed in one request (system prompt plus conversation).
    pub context_budget_chars: usize,
    pub worker_count: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            t_max: 3,
            temperature: DEFAULT_TEMPERATURE,
            model: String::new(),
            sql_timeout_ms: DEFAULT_SQL_TIMEOUT_MS,
            script_timeout_ms: DEFAULT_SCRIPT_TIMEOUT_MS,
            context_budget_chars: 400_000,
            worker_count: 1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_max < 1 {
            return Err("t_max must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} is outside [0, 2]", self.temperature));
        }
        if self.worker_count < 1 {
            return Err("worker_count must be at least 1".into());
        }
        Ok(())
    }

    fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            model: self.model.clone(),
            temperature: self.temperature,
            context_budget_chars: Some(self.context_budget_chars),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    DuelWonChampion,
    DuelWonChallenger,
    SingleCluster,
    AllFailed,
    MddFailed,
    SolverFailed,
    TieFallbackMajority,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub s_champ: BsF1Score,
    pub s_chal: BsF1Score,
}

/// The three results the final comparison used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuelEvidence {
    pub e_champ: ResultSet,
    pub e_chal: ResultSet,
    pub e_py: ResultSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Traces {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slicer: Option<AgentTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tester: Option<AgentTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<AgentTrace>,
}

impl Traces {
    fn all(&self) -> impl Iterator<Item = &AgentTrace> {
        self.slicer.iter().chain(self.tester.iter()).chain(self.solver.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunUsage {
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub llm_calls: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub question_id: String,
    pub selected_index: usize,
    pub selected_sql: String,
    pub reason: VerdictReason,
    pub scores: Option<Scores>,
    pub duel: Option<DuelPair>,
    pub clusters: Vec<ClusterSummary>,
    /// Set when the slicer failed and the full schema was used.
    pub slicer_fallback: bool,
    /// Why a fallback verdict was taken.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_detail: Option<String>,
    pub evidence: Option<DuelEvidence>,
    pub traces: Traces,
    pub usage: RunUsage,
}

impl Verdict {
    /// Re-derives the duel winner from the recorded results.
    pub fn replay(&self) -> Option<usize> {
        let (d, e) = (self.duel?, self.evidence.as_ref()?);
        Some(verdict(d.champion_index, d.challenger_index, &e.e_champ, &e.e_chal, &e.e_py).winner_index)
    }
}

/// Failures that abort a question instead of degrading its verdict.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("question has no candidates")]
    NoCandidates,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Database(#[from] SqlError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Executor(#[from] crate::executor::ExecutorError),
}

fn infrastructure(f: AgentFailure) -> Result<AgentFailure, PipelineError> {
    match f {
        AgentFailure::Provider(e) => Err(e.into()),
        AgentFailure::Executor(e) => Err(e.into()),
        other => Ok(other),
    }
}

/// Opens `db_path` read-only and selects one candidate.
pub fn select_one(
    cs: &CandidateSet,
    db_path: &Path,
    config: &PipelineConfig,
    provider: &dyn Provider,
    executor: &dyn ScriptExecutor,
) -> Result<Verdict, PipelineError> {
    let db = Database::open_readonly(db_path)?;
    select_on(cs, &db, config, provider, executor)
}

/// Selects one candidate against an already open database.
pub fn select_on(
    cs: &CandidateSet,
    db: &Database,
    config: &PipelineConfig,
    provider: &dyn Provider,
    executor: &dyn ScriptExecutor,
) -> Result<Verdict, PipelineError> {
    let start = Instant::now();
    if cs.candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    config.validate().map_err(PipelineError::Config)?;
    let clustering = cluster_candidates(db, &cs.candidates, config.sql_timeout_ms);
    let mut v = Verdict {
        question_id: cs.question_id.clone(),
        selected_index: clustering.majority(),
        selected_sql: String::new(),
        reason: VerdictReason::SingleCluster,
        scores: None,
        duel: None,
        clusters: clustering.clusters.iter().map(ClusterSummary::from).collect(),
        slicer_fallback: false,
        fallback_detail: None,
        evidence: None,
        traces: Traces::default(),
        usage: RunUsage::default(),
    };
    let finish = |mut v: Verdict| {
        v.selected_sql = cs.candidates[v.selected_index].clone();
        for t in v.traces.all() {
            v.usage.total_prompt_tokens += t.usage.prompt_tokens;
            v.usage.total_completion_tokens += t.usage.completion_tokens;
            v.usage.llm_calls += t.llm_calls;
        }
        v.usage.wall_ms = start.elapsed().as_millis() as u64;
        Ok(v)
    };
    let duel = match clustering.selection {
        DuelSelection::ChampionOnly(_) => return finish(v),
        DuelSelection::AllFailed(i) => {
            v.selected_index = i;
            v.reason = VerdictReason::AllFailed;
            return finish(v);
        }
        DuelSelection::Duel(d) => d,
    };
    v.duel = Some(duel);
    v.selected_index = duel.champion_index;
    let settings = config.agent_settings();
    let meta = introspect_schema(db)?;

    let sliced = run_slicer(cs, &meta, &duel, provider, &settings, config.t_max);
    v.traces.slicer = Some(sliced.trace);
    let slice = match sliced.outcome {
        Ok(s) => s,
        Err(f) => match infrastructure(f)? {
            f @ AgentFailure::ContextBudget { .. } => {
                v.reason = VerdictReason::MddFailed;
                v.fallback_detail = Some(format!("slicer: {f}"));
                return finish(v);
            }
            f => {
                log::info!("question {}: slicer failed ({f}); using the full schema", cs.question_id);
                v.slicer_fallback = true;
                SchemaSlice::full(&meta)
            }
        },
    };

    let seed = config.seed ^ stable_hash(&[&cs.question_id]);
    let hints = sample_value_hints(db, &slice, seed, config.sql_timeout_ms);
    let tested = run_tester(
        cs,
        &slice,
        &meta,
        Some(&hints),
        &duel,
        provider,
        &settings,
        config.t_max,
        config.sql_timeout_ms,
    );
    v.traces.tester = Some(tested.trace);
    let mdd = match tested.outcome {
        Ok(m) => m,
        Err(f) => {
            let f = infrastructure(f)?;
            v.reason = VerdictReason::MddFailed;
            v.fallback_detail = Some(format!("tester: {f}"));
            return finish(v);
        }
    };

    let req = SolverRequest::new(&cs.question_id, &cs.question, cs.evidence.as_deref(), &mdd, &meta);
    let solved = run_solver(&req, &meta, provider, executor, &settings, config.t_max, config.script_timeout_ms);
    v.traces.solver = Some(solved.trace);
    let e_py = match solved.outcome {
        Ok(rs) => rs,
        Err(f) => {
            let f = infrastructure(f)?;
            v.reason = match f {
                AgentFailure::ContextBudget { .. } => VerdictReason::MddFailed,
                _ => VerdictReason::SolverFailed,
            };
            v.fallback_detail = Some(format!("solver: {f}"));
            return finish(v);
        }
    };

    let out = verdict(duel.champion_index, duel.challenger_index, mdd.champion_result(), mdd.challenger_result(), &e_py);
    v.selected_index = out.winner_index;
    v.reason = match out.reason {
        DuelReason::ChampionWon => VerdictReason::DuelWonChampion,
        DuelReason::ChallengerWon => VerdictReason::DuelWonChallenger,
        DuelReason::Tie => VerdictReason::TieFallbackMajority,
    };
    v.scores = Some(Scores { s_champ: out.s_champ, s_chal: out.s_chal });
    v.evidence = Some(DuelEvidence {
        e_champ: mdd.champion_result().clone(),
        e_chal: mdd.challenger_result().clone(),
        e_py,
    });
    finish(v)
}
