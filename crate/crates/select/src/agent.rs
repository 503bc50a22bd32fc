//! Conversation bookkeeping and the bounded retry loop shared by the
//! slicer, tester and solver.

use mdd_select_core::{parse_tagged, render_prompt, AgentResponse, AgentRole, Bindings, PromptKind, ResultSet, Usage};
use serde::Serialize;

use crate::executor::ExecutorError;
use crate::llm::{ChatMessage, ChatRequest, MessageRole, Provider, ProviderError};

/// Per-call settings common to all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettings {
    pub model: String,
    pub temperature: f64,
    /// Upper bound on characters sent in one request; `None` disables the check.
    pub context_budget_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok,
    /// Both duel queries returned this same result.
    IdenticalResults { result: ResultSet },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub prompt: String,
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AgentTrace {
    pub attempts: Vec<Attempt>,
    pub usage: Usage,
    pub llm_calls: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentFailure {
    #[error("no valid answer after {attempts} attempts; last error: {last_error}")]
    RetriesExhausted { attempts: usize, last_error: String },
    #[error("prompt of {chars} characters exceeds the context budget of {budget}")]
    ContextBudget { chars: usize, budget: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

impl AgentFailure {
    /// Failures that abort the question instead of degrading the verdict.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, AgentFailure::Provider(_) | AgentFailure::Executor(_))
    }
}

#[derive(Debug)]
pub struct AgentRun<T> {
    pub trace: AgentTrace,
    pub outcome: Result<T, AgentFailure>,
}

/// What one attempt's validation decided.
pub(crate) enum Step<T> {
    Done(T),
    /// Feed `message` into the retry prompt.
    Retry { message: String, outcome: AttemptOutcome },
    Abort(AgentFailure),
}

impl<T> Step<T> {
    pub(crate) fn error(message: impl Into<String>) -> Self {
        let message = message.into();
        Step::Retry { outcome: AttemptOutcome::Error { message: message.clone() }, message }
    }
}

/// Runs up to `t_max` attempts. The conversation (system prompt, every
/// prior user and assistant turn) is resent in full on each call.
pub(crate) fn run_loop<T>(
    provider: &dyn Provider,
    role: AgentRole,
    settings: &AgentSettings,
    question_id: &str,
    t_max: u32,
    initial_prompt: String,
    mut validate: impl FnMut(&AgentResponse, &mut Attempt) -> Step<T>,
) -> AgentRun<T> {
    let mut trace = AgentTrace::default();
    let mut request = ChatRequest {
        system: role.system_prompt().to_string(),
        messages: Vec::new(),
        temperature: settings.temperature,
        model: settings.model.clone(),
        question_id: question_id.to_string(),
    };
    let mut prompt = initial_prompt;
    let mut last_error = String::new();
    for _ in 0..t_max.max(1) {
        request.messages.push(ChatMessage { role: MessageRole::User, content: prompt.clone() });
        let mut attempt = Attempt {
            prompt: prompt.clone(),
            response: None,
            script: None,
            outcome: AttemptOutcome::Ok,
        };
        if let Some(budget) = settings.context_budget_chars {
            let chars = request.char_len();
            if chars > budget {
                attempt.outcome = AttemptOutcome::Error { message: format!("context budget exceeded ({chars} > {budget})") };
                trace.attempts.push(attempt);
                return AgentRun { trace, outcome: Err(AgentFailure::ContextBudget { chars, budget }) };
            }
        }
        trace.llm_calls += 1;
        let response = match provider.complete(role, &request) {
            Ok(r) => r,
            Err(e) => {
                attempt.outcome = AttemptOutcome::Error { message: e.to_string() };
                trace.attempts.push(attempt);
                return AgentRun { trace, outcome: Err(e.into()) };
            }
        };
        trace.usage += response.usage;
        attempt.response = Some(response.text.clone());
        request.messages.push(ChatMessage { role: MessageRole::Assistant, content: response.text.clone() });
        let step = match parse_tagged(&response.text) {
            Ok(mut parsed) => {
                parsed.usage = response.usage;
                validate(&parsed, &mut attempt)
            }
            Err(e) => Step::error(e.to_string()),
        };
        match step {
            Step::Done(v) => {
                attempt.outcome = AttemptOutcome::Ok;
                trace.attempts.push(attempt);
                return AgentRun { trace, outcome: Ok(v) };
            }
            Step::Abort(f) => {
                attempt.outcome = AttemptOutcome::Error { message: f.to_string() };
                trace.attempts.push(attempt);
                return AgentRun { trace, outcome: Err(f) };
            }
            Step::Retry { message, outcome } => {
                attempt.outcome = outcome;
                trace.attempts.push(attempt);
                prompt = retry_prompt(role, &message);
                last_error = message;
            }
        }
    }
    let attempts = trace.attempts.len();
    AgentRun { trace, outcome: Err(AgentFailure::RetriesExhausted { attempts, last_error }) }
}

pub(crate) fn retry_prompt(role: AgentRole, message: &str) -> String {
    let bindings: Bindings = [("error_message".to_string(), message.to_string())].into_iter().collect();
    render_prompt(role, PromptKind::Retry, &bindings).expect("retry templates bind error_message").user
}

/// `{evidence_str}`: a labelled line, or nothing when there is no evidence.
pub fn evidence_str(evidence: Option<&str>) -> String {
    match evidence.map(str::trim) {
        Some(e) if !e.is_empty() => format!("Evidence: {e}"),
        _ => String::new(),
    }
}
