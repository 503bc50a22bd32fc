//! Chat-completion providers: an OpenAI-compatible HTTP client and a
//! scripted provider that replays canned responses.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use mdd_select_core::{AgentRole, Usage};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

/// One provider call: the system prompt plus the whole conversation so far,
/// ending with the newest user turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model: String,
    /// Routing key for scripted replay; never sent over the wire.
    #[serde(skip)]
    pub question_id: String,
}

impl ChatRequest {
    pub fn user_turns(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().filter(|m| m.role == MessageRole::User).map(|m| m.content.as_str())
    }

    pub fn last_user_turn(&self) -> Option<&str> {
        self.user_turns().last()
    }

    /// Characters in the system prompt and every message.
    pub fn char_len(&self) -> usize {
        self.system.chars().count() + self.messages.iter().map(|m| m.content.chars().count()).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("scripted provider has no response left for {role} call {call} of question '{question_id}'")]
    Exhausted { role: AgentRole, call: usize, question_id: String },
    #[error("invalid temperature {0}; expected a value in [0, 2]")]
    InvalidTemperature(f64),
}

pub trait Provider: Send + Sync {
    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL (`.../v1`) or the full chat-completions URL.
    pub endpoint_url: String,
    pub api_key_env_var: String,
    pub model: String,
    pub max_retries_network: u32,
    pub request_timeout_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint_url: "https://api.openai.com/v1".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            model: "gpt-4o-mini".into(),
            max_retries_network: 3,
            request_timeout_ms: 120_000,
        }
    }
}

/// Blocking client for the OpenAI chat-completions wire format.
pub struct OpenAiProvider {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    default_model: String,
    max_retries: u32,
}

impl std::fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiProvider")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiProvider {
    /// Reads the API key from the configured environment variable; a missing
    /// key sends no `Authorization` header (local servers).
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| ProviderError::Malformed(format!("building HTTP client: {e}")))?;
        let base = config.endpoint_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let api_key = std::env::var(&config.api_key_env_var).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without credentials", config.api_key_env_var);
        }
        Ok(OpenAiProvider {
            client,
            url,
            api_key,
            default_model: config.model.clone(),
            max_retries: config.max_retries_network,
        })
    }

    fn send_once(&self, body: &WireRequest<'_>) -> Result<ChatResponse, (bool, ProviderError)> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, ProviderError::Unreachable { attempts: 1, message: e.to_string() }))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, ProviderError::Unreachable { attempts: 1, message: e.to_string() }))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, ProviderError::Http { status: status.as_u16(), body: text }));
        }
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| (false, ProviderError::Malformed(e.to_string())))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (false, ProviderError::Malformed("no choices[0].message.content".into())))?;
        let usage = wire
            .usage
            .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens })
            .unwrap_or_default();
        Ok(ChatResponse { text: content, usage })
    }
}

impl Provider for OpenAiProvider {
    fn complete(&self, _role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(ProviderError::InvalidTemperature(request.temperature));
        }
        let mut messages = vec![WireMessage { role: "system", content: &request.system }];
        messages.extend(request.messages.iter().map(|m| WireMessage {
            role: match m.role {
                MessageRole::User => "user",
                MessageRole::Assistant => "assistant",
            },
            content: &m.content,
        }));
        let model = if request.model.is_empty() { &self.default_model } else { &request.model };
        let body = WireRequest { model, messages, temperature: request.temperature };
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << (attempt - 1).min(4)));
            }
            match self.send_once(&body) {
                Ok(r) => return Ok(r),
                Err((true, e)) => {
                    log::warn!("provider attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
                Err((false, e)) => return Err(e),
            }
        }
        Err(ProviderError::Unreachable { attempts, message: last })
    }
}

/// Rough token estimate for providers that report none.
fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

#[derive(Default)]
struct ScriptState {
    queues: BTreeMap<(String, AgentRole), VecDeque<String>>,
    calls: Vec<(AgentRole, ChatRequest)>,
}

/// Replays canned responses per `(question, role)` in call order.
///
/// Responses pushed without a question id serve any question whose own
/// queue is empty. Running out is an error.
#[derive(Default)]
pub struct ScriptedProvider {
    state: Mutex<ScriptState>,
}

/// On-disk replay file: question id -> role -> responses.
pub type ScriptFile = BTreeMap<String, BTreeMap<AgentRole, Vec<String>>>;

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: ScriptFile) -> Self {
        let p = Self::new();
        for (qid, roles) in script {
            for (role, texts) in roles {
                for t in texts {
                    p.push_for(&qid, role, t);
                }
            }
        }
        p
    }

    pub fn push(&self, role: AgentRole, text: impl Into<String>) -> &Self {
        self.push_for("", role, text)
    }

    pub fn push_for(&self, question_id: &str, role: AgentRole, text: impl Into<String>) -> &Self {
        let mut s = self.state.lock().expect("scripted provider poisoned");
        s.queues.entry((question_id.to_string(), role)).or_default().push_back(text.into());
        self
    }

    pub fn calls(&self) -> Vec<(AgentRole, ChatRequest)> {
        self.state.lock().expect("scripted provider poisoned").calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("scripted provider poisoned").calls.len()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("scripted provider poisoned").queues.values().map(VecDeque::len).sum()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut s = self.state.lock().expect("scripted provider poisoned");
        s.calls.push((role, request.clone()));
        let call = s.calls.iter().filter(|(r, c)| *r == role && c.question_id == request.question_id).count();
        let own = (request.question_id.clone(), role);
        let text = match s.queues.get_mut(&own).and_then(VecDeque::pop_front) {
            Some(t) => t,
            None => s
                .queues
                .get_mut(&(String::new(), role))
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| ProviderError::Exhausted { role, call, question_id: request.question_id.clone() })?,
        };
        let usage = Usage {
            prompt_tokens: estimate_tokens(request.char_len()),
            completion_tokens: estimate_tokens(text.chars().count()),
        };
        Ok(ChatResponse { text, usage })
    }
}
