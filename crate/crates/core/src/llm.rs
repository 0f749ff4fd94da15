//! Chat-completion backends with token accounting.
//!
//! [`ScriptedBackend`] answers from a rule file and is fully deterministic; the HTTP
//! backend speaks the common chat-completions JSON shape.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "http")]
mod http;
#[cfg(feature = "http")]
pub use http::HttpBackend;

/// Reply used when no script rule matches.
pub const SCRIPT_DEFAULT_REPLY: &str = "I am unable to suggest a fix.";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("context overflow: about {estimated} tokens exceed the {limit}-token window")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("backend returned an unusable response: {0}")]
    BadResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("malformed script {path}: {message}")]
    Script { path: PathBuf, message: String },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::RateLimited(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

/// Approximate token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

pub fn estimate_messages(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub reply: ChatMessage,
    pub usage: TokenUsage,
}

/// One bug's repair under one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub run: String,
    pub bug_id: String,
}

impl Session {
    pub fn new(run: impl Into<String>, bug_id: impl Into<String>) -> Self {
        Session {
            run: run.into(),
            bug_id: bug_id.into(),
        }
    }

    pub fn bug(bug_id: impl Into<String>) -> Self {
        Self::new("default", bug_id)
    }
}

/// A chat model. Per-session state (such as a script's turn counter) never leaks across
/// sessions.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, session: &Session, messages: &[ChatMessage])
        -> Result<Completion, LlmError>;
    fn max_context_tokens(&self) -> usize;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(
        &self,
        session: &Session,
        messages: &[ChatMessage],
    ) -> Result<Completion, LlmError> {
        (**self).complete(session, messages)
    }

    fn max_context_tokens(&self) -> usize {
        (**self).max_context_tokens()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(
        &self,
        session: &Session,
        messages: &[ChatMessage],
    ) -> Result<Completion, LlmError> {
        (**self).complete(session, messages)
    }

    fn max_context_tokens(&self) -> usize {
        (**self).max_context_tokens()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    /// Not pinned by any reference setting; exposed for completeness.
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub endpoint: String,
    pub api_key_env: String,
    pub script_path: Option<PathBuf>,
    pub max_context_tokens: usize,
    /// Total attempts for retryable failures.
    pub retries: u32,
    pub backoff_ms: u64,
    pub request_timeout_s: u64,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            model_name: "gpt-3.5-turbo-0301".into(),
            temperature: 1.0,
            top_p: 1.0,
            max_output_tokens: 512,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            script_path: None,
            max_context_tokens: 4096,
            retries: 3,
            backoff_ms: 1000,
            request_timeout_s: 120,
            seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn check(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_context_tokens == 0 {
            return Err(LlmError::Config("max_context_tokens must be > 0".into()));
        }
        if self.retries == 0 {
            return Err(LlmError::Config("retries must be >= 1".into()));
        }
        Ok(())
    }

    /// Builds the configured backend.
    pub fn build(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        self.check()?;
        match self.kind {
            BackendKind::Scripted => {
                let path = self.script_path.as_deref().ok_or_else(|| {
                    LlmError::Config("scripted backend needs a script path".into())
                })?;
                let mut backend = scripted_oracle(path)?;
                backend.seed = self.seed;
                backend.max_context_tokens = self.max_context_tokens;
                Ok(Box::new(backend))
            }
            #[cfg(feature = "http")]
            BackendKind::Http => Ok(Box::new(HttpBackend::new(self.clone())?)),
            #[cfg(not(feature = "http"))]
            BackendKind::Http => Err(LlmError::Config("built without the `http` feature".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    /// 1-based query index within one session.
    #[serde(default)]
    pub turn: Option<usize>,
    /// Substring of the last user message.
    #[serde(default)]
    pub contains: Option<String>,
    /// Session (bug id) the rule is restricted to.
    #[serde(default)]
    pub bug: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(rename = "match", default)]
    pub matcher: RuleMatch,
    /// Fixed reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Reply drawn from this pool with the backend's seeded generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl ScriptRule {
    pub fn reply(matcher: RuleMatch, reply: impl Into<String>) -> Self {
        ScriptRule {
            matcher,
            reply: Some(reply.into()),
            choices: None,
        }
    }

    fn check(&self) -> Result<(), String> {
        match (&self.reply, &self.choices) {
            (Some(r), None) if !r.is_empty() => Ok(()),
            (None, Some(c)) if !c.is_empty() && c.iter().all(|s| !s.is_empty()) => Ok(()),
            _ => Err("each rule needs exactly one of a non-empty `reply` or `choices`".into()),
        }
    }

    fn matches(&self, session: &Session, turn: usize, last_user: &str) -> bool {
        let m = &self.matcher;
        m.turn.is_none_or(|t| t == turn)
            && m.contains.as_deref().is_none_or(|c| last_user.contains(c))
            && m.bug.as_deref().is_none_or(|b| b == session.bug_id)
    }
}

struct SessionState {
    turns: usize,
    rng: ChaCha8Rng,
}

/// Deterministic backend driven by an ordered list of rules; the first match wins.
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    pub seed: u64,
    pub max_context_tokens: usize,
    sessions: Mutex<HashMap<Session, SessionState>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        for (i, rule) in rules.iter().enumerate() {
            rule.check().map_err(|message| LlmError::Script {
                path: PathBuf::from("<inline>"),
                message: format!("rule {i}: {message}"),
            })?;
        }
        Ok(ScriptedBackend {
            rules,
            seed: 0,
            max_context_tokens: BackendConfig::default().max_context_tokens,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// A script that answers the n-th query of every session with `replies[n-1]`.
    pub fn sequence<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let rules = replies
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                ScriptRule::reply(
                    RuleMatch {
                        turn: Some(i + 1),
                        ..RuleMatch::default()
                    },
                    r,
                )
            })
            .collect();
        Self::new(rules).expect("sequence replies must be non-empty")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, LlmError> {
        let rules: Vec<ScriptRule> = serde_json::from_str(text).map_err(|e| LlmError::Script {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(rules).map_err(|e| match e {
            LlmError::Script { message, .. } => LlmError::Script {
                path: origin.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_context(mut self, tokens: usize) -> Self {
        self.max_context_tokens = tokens;
        self
    }

    /// Queries answered so far in `session`.
    pub fn turns(&self, session: &Session) -> usize {
        self.sessions
            .lock()
            .expect("script state poisoned")
            .get(session)
            .map_or(0, |s| s.turns)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        session: &Session,
        messages: &[ChatMessage],
    ) -> Result<Completion, LlmError> {
        let estimated = estimate_messages(messages);
        if estimated > self.max_context_tokens {
            return Err(LlmError::ContextOverflow {
                estimated,
                limit: self.max_context_tokens,
            });
        }
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());

        let mut sessions = self.sessions.lock().expect("script state poisoned");
        let state = sessions
            .entry(session.clone())
            .or_insert_with(|| SessionState {
                turns: 0,
                rng: ChaCha8Rng::seed_from_u64(self.seed),
            });
        state.turns += 1;
        let turn = state.turns;

        let content = match self
            .rules
            .iter()
            .find(|r| r.matches(session, turn, last_user))
        {
            Some(ScriptRule {
                reply: Some(reply), ..
            }) => reply.clone(),
            Some(ScriptRule {
                choices: Some(pool),
                ..
            }) => pool[state.rng.random_range(0..pool.len())].clone(),
            _ => SCRIPT_DEFAULT_REPLY.to_string(),
        };
        let usage = TokenUsage {
            prompt_tokens: estimated as u64,
            completion_tokens: estimate_tokens(&content) as u64,
        };
        Ok(Completion {
            reply: ChatMessage::assistant(content),
            usage,
        })
    }

    fn max_context_tokens(&self) -> usize {
        self.max_context_tokens
    }
}

/// Loads a script file into a [`ScriptedBackend`].
pub fn scripted_oracle(script: &Path) -> Result<ScriptedBackend, LlmError> {
    let text = fs::read_to_string(script).map_err(|e| LlmError::Script {
        path: script.to_path_buf(),
        message: e.to_string(),
    })?;
    ScriptedBackend::from_json(&text, script)
}
