//! Completion backends: a live client for OpenAI-compatible chat-completion
//! services and a deterministic rule-driven backend for tests and demos.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    /// Id of the requesting agent. Not sent over the wire; the scripted
    /// backend uses it for role filters.
    pub agent: String,
    pub model: String,
    pub turns: Vec<ChatTurn>,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RequestError {
    #[error("request must start with exactly one system turn")]
    SystemTurn,
    #[error("turn {0} has empty content")]
    EmptyTurn(usize),
    #[error("temperature must be >= 0")]
    Temperature,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        let systems = self.turns.iter().filter(|t| t.role == Role::System).count();
        if systems != 1 || self.turns.first().map(|t| t.role) != Some(Role::System) {
            return Err(RequestError::SystemTurn);
        }
        if let Some(i) = self
            .turns
            .iter()
            .position(|t| t.role != Role::System && t.content.is_empty())
        {
            return Err(RequestError::EmptyTurn(i));
        }
        if !(self.temperature >= 0.0) {
            return Err(RequestError::Temperature);
        }
        Ok(())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

// --- scripted -------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Trigger {
    Any,
    Substring(String),
    Pattern(Regex),
}

impl Trigger {
    pub fn parse(s: &str) -> Result<Self, regex::Error> {
        if s == "*" {
            Ok(Trigger::Any)
        } else if let Some(re) = s.strip_prefix("re:") {
            Ok(Trigger::Pattern(Regex::new(re)?))
        } else {
            Ok(Trigger::Substring(s.to_owned()))
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        match self {
            Trigger::Any => true,
            Trigger::Substring(s) => text.contains(s.as_str()),
            Trigger::Pattern(re) => re.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    /// `None` matches every agent.
    pub role: Option<String>,
    pub trigger: Trigger,
    pub response: String,
    pub once: bool,
    pub priority: i64,
    /// 1-based source line, 0 for rules built in code.
    pub line: usize,
}

impl ScriptRule {
    pub fn new(role: Option<&str>, trigger: Trigger, response: &str, priority: i64) -> Self {
        Self {
            role: role.map(str::to_owned),
            trigger,
            response: response.to_owned(),
            once: false,
            priority,
            line: 0,
        }
    }

    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Splits on unescaped `|`, unescaping `\|` and `\\`.
fn split_fields(line: &str) -> Vec<String> {
    let mut fields = vec![String::new()];
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some(n @ ('|' | '\\')) => fields.last_mut().unwrap().push(n),
                Some(n) => {
                    let f = fields.last_mut().unwrap();
                    f.push('\\');
                    f.push(n);
                }
                None => fields.last_mut().unwrap().push('\\'),
            },
            '|' => fields.push(String::new()),
            c => fields.last_mut().unwrap().push(c),
        }
    }
    fields.into_iter().map(|f| f.trim().to_owned()).collect()
}

/// Parses the rule format: one rule per line,
/// `priority | role | trigger | response [| once]`, `#` comments.
pub fn parse_script(text: &str) -> Result<Vec<ScriptRule>, ScriptError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| ScriptError::Parse { line, message };
        let fields = split_fields(trimmed);
        if !(4..=5).contains(&fields.len()) {
            return Err(err(format!(
                "expected 4 or 5 '|'-separated fields, found {}",
                fields.len()
            )));
        }
        let priority = fields[0]
            .parse::<i64>()
            .map_err(|_| err(format!("priority {:?} is not an integer", fields[0])))?;
        let role = match fields[1].as_str() {
            "" => return Err(err("empty role (use * for any)".into())),
            "*" => None,
            r => Some(r.to_owned()),
        };
        if fields[2].is_empty() {
            return Err(err("empty trigger (use * for any)".into()));
        }
        let trigger = Trigger::parse(&fields[2]).map_err(|e| err(format!("bad pattern: {e}")))?;
        if fields[3].is_empty() {
            return Err(err("empty response".into()));
        }
        let once = match fields.get(4).map(String::as_str) {
            None => false,
            Some("once") => true,
            Some(other) => return Err(err(format!("unknown flag {other:?}"))),
        };
        rules.push(ScriptRule {
            role,
            trigger,
            response: fields[3].clone(),
            once,
            priority,
            line,
        });
    }
    Ok(rules)
}

pub fn load_script(path: &Path) -> Result<Vec<ScriptRule>, ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_script(&text)
}

/// Deterministic backend: picks the highest-priority matching rule
/// (declaration order breaks ties), else the default response.
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    default_response: String,
    fired: Mutex<Vec<u32>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default_response: impl Into<String>) -> Self {
        let n = rules.len();
        Self {
            rules,
            default_response: default_response.into(),
            fired: Mutex::new(vec![0; n]),
        }
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    pub fn fire_counts(&self) -> Vec<u32> {
        self.fired.lock().unwrap().clone()
    }

    fn select(&self, agent: &str, input: &str, fired: &[u32]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.once && fired[i] > 0 {
                continue;
            }
            if rule.role.as_deref().is_some_and(|r| r != agent) {
                continue;
            }
            if !rule.trigger.matches(input) {
                continue;
            }
            if best.is_none_or(|b| rule.priority > self.rules[b].priority) {
                best = Some(i);
            }
        }
        best
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        req.validate()?;
        let input = req.last_user().unwrap_or("");
        let mut fired = self.fired.lock().unwrap();
        match self.select(&req.agent, input, &fired) {
            Some(i) => {
                fired[i] += 1;
                Ok(self.rules[i].response.clone())
            }
            None => Ok(self.default_response.clone()),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Backend that always fails; exercises failure isolation.
pub struct FailingBackend;

impl Backend for FailingBackend {
    fn complete(&self, _req: &CompletionRequest) -> Result<String, BackendError> {
        Err(BackendError::Unavailable {
            attempts: 1,
            last_error: "backend disabled".into(),
        })
    }
    fn name(&self) -> &str {
        "failing"
    }
}

// --- live -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    /// Per-agent model overrides.
    pub models: HashMap<String, String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            model: "gpt-3.5-turbo".into(),
            models: HashMap::new(),
            api_key_env: "PLANTBOT_API_KEY".into(),
            timeout: Duration::from_secs(20),
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }
}

#[cfg(feature = "live")]
#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatTurn],
    temperature: f64,
    max_tokens: u32,
}

#[cfg(feature = "live")]
#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[cfg(feature = "live")]
#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[cfg(feature = "live")]
#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[cfg(feature = "live")]
pub struct LiveBackend {
    cfg: LiveConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[cfg(feature = "live")]
impl LiveBackend {
    pub fn new(cfg: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable {
                attempts: 0,
                last_error: e.to_string(),
            })?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        Ok(Self {
            cfg,
            client,
            api_key,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<String, String> {
        let model = match self.cfg.models.get(&req.agent) {
            Some(m) => m,
            None if req.model.is_empty() => &self.cfg.model,
            None => &req.model,
        };
        let body = WireRequest {
            model,
            messages: &req.turns,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut call = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let parsed: WireResponse = resp.json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response has no choices".to_owned())
    }
}

#[cfg(feature = "live")]
impl Backend for LiveBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        req.validate()?;
        let attempts = self.cfg.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(req) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(agent = %req.agent, attempt, error = %e, "completion failed");
                    last_error = e;
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts,
            last_error,
        })
    }

    fn name(&self) -> &str {
        "live"
    }
}
