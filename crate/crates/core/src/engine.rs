//! Conversational repair: interleaves patch generation with validation feedback,
//! restarts conversations that reach their length bound, and, once a plausible patch
//! exists, asks for alternatives until the try budget is spent.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::bug::{
    split_source, BugError, BugInstance, Patch, PatchOrigin, RepairScenario, SplitContext,
};
use crate::failure::{TestFailureInfo, ValidationResult, Validator};
use crate::llm::{estimate_messages, ChatBackend, ChatMessage, LlmError, Session, TokenUsage};
use crate::prompt::{
    build_alt_instruction, build_feedback, build_initial_prompt, extract_patch, system_message,
    unparseable_feedback, FeedbackVariant, PromptError, PromptVariant, RenderedPrompt,
};

/// Dollars per 1000 billed tokens (prompt plus completion).
pub const DEFAULT_COST_RATE_PER_1K: f64 = 0.002;
pub const DEFAULT_CONV_LENGTH: usize = 3;
/// Five hours.
pub const DEFAULT_END_TO_END_TIMEOUT_S: u64 = 5 * 60 * 60;

pub fn default_max_tries(scenario: RepairScenario) -> usize {
    match scenario {
        RepairScenario::SingleLine | RepairScenario::SingleHunk => 200,
        RepairScenario::SingleFunction => 100,
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Bug(#[from] BugError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Identifies the configuration in ablation tables and scopes backend sessions.
    pub label: String,
    pub max_tries: usize,
    pub max_conv_length: usize,
    pub prompt_variant: PromptVariant,
    pub feedback_variant: FeedbackVariant,
    pub end_to_end_timeout_s: u64,
    pub cost_rate_per_1k: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            label: "default".into(),
            max_tries: default_max_tries(RepairScenario::SingleLine),
            max_conv_length: DEFAULT_CONV_LENGTH,
            prompt_variant: PromptVariant::default(),
            feedback_variant: FeedbackVariant::default(),
            end_to_end_timeout_s: DEFAULT_END_TO_END_TIMEOUT_S,
            cost_rate_per_1k: DEFAULT_COST_RATE_PER_1K,
        }
    }
}

impl EngineConfig {
    pub fn for_scenario(scenario: RepairScenario) -> Self {
        EngineConfig {
            max_tries: default_max_tries(scenario),
            ..EngineConfig::default()
        }
    }

    pub fn check(&self) -> Result<(), EngineError> {
        if self.max_tries < 1 {
            return Err(EngineError::Config("max_tries must be >= 1".into()));
        }
        if self.max_conv_length < 1 {
            return Err(EngineError::Config("max_conv_length must be >= 1".into()));
        }
        if self.cost_rate_per_1k.is_nan() || self.cost_rate_per_1k < 0.0 {
            return Err(EngineError::Config("cost_rate_per_1k must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub tries_used: usize,
    pub dollars: f64,
}

impl CostLedger {
    pub fn total_tokens(&self) -> u64 {
        self.total_prompt_tokens + self.total_completion_tokens
    }

    fn record(&mut self, usage: TokenUsage, rate: f64) {
        self.total_prompt_tokens += usage.prompt_tokens;
        self.total_completion_tokens += usage.completion_tokens;
        self.dollars = compute_cost(self, rate);
    }
}

/// Dollar cost of every billed token at `rate` dollars per thousand.
pub fn compute_cost(ledger: &CostLedger, rate: f64) -> f64 {
    ledger.total_tokens() as f64 / 1000.0 * rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Conversation,
    Alternative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventVerdict {
    Pass,
    /// Passed, but equal to an earlier plausible patch after normalization.
    Duplicate,
    CompileError,
    TestFailure,
    Timeout,
    Unparseable,
    BackendError,
}

impl From<&ValidationResult> for EventVerdict {
    fn from(result: &ValidationResult) -> Self {
        match result {
            ValidationResult::Pass => EventVerdict::Pass,
            ValidationResult::CompileError { .. } => EventVerdict::CompileError,
            ValidationResult::TestFailure { .. } => EventVerdict::TestFailure,
            ValidationResult::Timeout => EventVerdict::Timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEvent {
    /// 1-based try number; 0 for events that consumed no try.
    #[serde(rename = "try")]
    pub try_index: usize,
    #[serde(rename = "conv")]
    pub conversation_id: usize,
    pub phase: Phase,
    pub patch: Option<String>,
    pub verdict: EventVerdict,
    pub feedback: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    Backend,
    Validation,
    ContextWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAbort {
    pub kind: AbortKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub bug_id: String,
    pub plausible: Vec<Patch>,
    pub ledger: CostLedger,
    pub events: Vec<RepairEvent>,
    pub timed_out: bool,
    pub abort: Option<RepairAbort>,
}

impl RepairOutcome {
    pub fn empty(bug_id: &str) -> Self {
        RepairOutcome {
            bug_id: bug_id.to_string(),
            plausible: Vec::new(),
            ledger: CostLedger::default(),
            events: Vec::new(),
            timed_out: false,
            abort: None,
        }
    }
}

/// Everything the engine needs about one bug: the bug, its split function and the
/// original bug-exposing failure.
#[derive(Debug, Clone)]
pub struct RepairTask {
    pub bug: BugInstance,
    pub context: SplitContext,
    pub original: TestFailureInfo,
}

impl RepairTask {
    pub fn new(
        bug: BugInstance,
        source: &str,
        original: TestFailureInfo,
    ) -> Result<Self, BugError> {
        let context = split_source(source, bug.function_span, bug.bug_span)?;
        Ok(RepairTask {
            bug,
            context,
            original,
        })
    }

    pub fn load(bug: BugInstance, original: TestFailureInfo) -> Result<Self, BugError> {
        let source = bug.read_source()?;
        Self::new(bug, &source, original)
    }

    /// Initial prompt and system message under `variant` (shots capped at what exists).
    pub fn render(
        &self,
        variant: &PromptVariant,
    ) -> Result<(RenderedPrompt, RenderedPrompt), PromptError> {
        let variant = variant.clamped_to(&self.bug);
        let initial = build_initial_prompt(&self.bug, &self.context, &self.original, &variant)?;
        Ok((system_message(&variant), initial))
    }
}

struct Deadline {
    #[cfg(not(target_arch = "wasm32"))]
    end: Option<std::time::Instant>,
}

impl Deadline {
    fn after_secs(secs: u64) -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Deadline {
                end: std::time::Instant::now().checked_add(std::time::Duration::from_secs(secs)),
            }
        }
        #[cfg(target_arch = "wasm32")]
        {
            let _ = secs;
            Deadline {}
        }
    }

    fn expired(&self) -> bool {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.end.is_some_and(|end| std::time::Instant::now() >= end)
        }
        #[cfg(target_arch = "wasm32")]
        {
            false
        }
    }
}

/// Drops the oldest exchanges until the query fits the context window. `None` when the
/// system message and initial prompt alone do not fit.
fn fit_query(
    system: &RenderedPrompt,
    initial: &RenderedPrompt,
    history: &mut Vec<(String, String)>,
    limit: usize,
) -> Option<Vec<ChatMessage>> {
    loop {
        let mut messages = Vec::with_capacity(2 + 2 * history.len());
        messages.push(ChatMessage::system(system.text.clone()));
        messages.push(ChatMessage::user(initial.text.clone()));
        for (reply, feedback) in history.iter() {
            messages.push(ChatMessage::assistant(reply.clone()));
            messages.push(ChatMessage::user(feedback.clone()));
        }
        if estimate_messages(&messages) <= limit {
            return Some(messages);
        }
        if history.is_empty() {
            return None;
        }
        debug!("evicting oldest exchange to fit the context window");
        history.remove(0);
    }
}

/// Runs the full repair loop for one bug.
pub fn conversational_repair(
    task: &RepairTask,
    backend: &dyn ChatBackend,
    validator: &mut dyn Validator,
    config: &EngineConfig,
) -> Result<RepairOutcome, EngineError> {
    config.check()?;
    let bug = &task.bug;
    let (system, initial) = task.render(&config.prompt_variant)?;
    let session = Session::new(&config.label, &bug.id);
    let deadline = Deadline::after_secs(config.end_to_end_timeout_s);
    let rate = config.cost_rate_per_1k;
    let limit = backend.max_context_tokens();

    let mut out = RepairOutcome::empty(&bug.id);
    let mut conversation = 0;

    'search: while out.ledger.tries_used < config.max_tries && out.plausible.is_empty() {
        conversation += 1;
        let mut history: Vec<(String, String)> = Vec::new();
        let mut length = 0;
        while length < config.max_conv_length && out.ledger.tries_used < config.max_tries {
            if deadline.expired() {
                out.timed_out = true;
                break 'search;
            }
            let Some(messages) = fit_query(&system, &initial, &mut history, limit) else {
                out.abort = Some(RepairAbort {
                    kind: AbortKind::ContextWindow,
                    message: "initial prompt exceeds the context window".into(),
                });
                break 'search;
            };
            let completion = match backend.complete(&session, &messages) {
                Ok(c) => c,
                Err(LlmError::ContextOverflow { .. }) if !history.is_empty() => {
                    // The backend counts tokens differently than the estimate.
                    history.remove(0);
                    continue;
                }
                Err(e) => {
                    abort_on_backend(&mut out, conversation, Phase::Conversation, e);
                    break 'search;
                }
            };
            out.ledger.tries_used += 1;
            out.ledger.record(completion.usage, rate);
            let try_index = out.ledger.tries_used;

            let mut event = RepairEvent {
                try_index,
                conversation_id: conversation,
                phase: Phase::Conversation,
                patch: None,
                verdict: EventVerdict::Unparseable,
                feedback: None,
                prompt_tokens: completion.usage.prompt_tokens,
                completion_tokens: completion.usage.completion_tokens,
            };
            let feedback = match extract_patch(&completion.reply.content, bug.scenario) {
                Err(_) => unparseable_feedback(),
                Ok(mut patch) => {
                    patch.try_index = try_index;
                    patch.origin = PatchOrigin::ConversationalRepair;
                    event.patch = Some(patch.text.clone());
                    let result = match validator.validate(&patch) {
                        Ok(r) => r,
                        Err(e) => {
                            out.events.push(event);
                            out.abort = Some(RepairAbort {
                                kind: AbortKind::Validation,
                                message: e.to_string(),
                            });
                            break 'search;
                        }
                    };
                    event.verdict = EventVerdict::from(&result);
                    if result.is_pass() {
                        info!(bug = %bug.id, try_index, "first plausible patch");
                        out.events.push(event);
                        out.plausible.push(patch);
                        break 'search;
                    }
                    build_feedback(&result, &task.original, &config.feedback_variant)?
                }
            };
            event.feedback = Some(feedback.text.clone());
            out.events.push(event);
            history.push((completion.reply.content, feedback.text));
            length += 1;
        }
    }

    if !out.plausible.is_empty() && out.abort.is_none() && !out.timed_out {
        alternative_phase(
            task,
            backend,
            validator,
            config,
            &system,
            &initial,
            &session,
            &deadline,
            &mut out,
            conversation,
        )?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn alternative_phase(
    task: &RepairTask,
    backend: &dyn ChatBackend,
    validator: &mut dyn Validator,
    config: &EngineConfig,
    system: &RenderedPrompt,
    initial: &RenderedPrompt,
    session: &Session,
    deadline: &Deadline,
    out: &mut RepairOutcome,
    mut conversation: usize,
) -> Result<(), EngineError> {
    let bug = &task.bug;
    let mut seen: HashSet<String> = out
        .plausible
        .iter()
        .map(|p| normalize_patch(&p.text))
        .collect();
    while out.ledger.tries_used < config.max_tries {
        if deadline.expired() {
            out.timed_out = true;
            return Ok(());
        }
        conversation += 1;
        let alt = build_alt_instruction(initial, &out.plausible)?;
        let messages = vec![
            ChatMessage::system(system.text.clone()),
            ChatMessage::user(alt.text),
        ];
        if estimate_messages(&messages) > backend.max_context_tokens() {
            warn!(bug = %bug.id, "alternative prompt no longer fits the context window");
            return Ok(());
        }
        let completion = match backend.complete(session, &messages) {
            Ok(c) => c,
            Err(LlmError::ContextOverflow { .. }) => return Ok(()),
            Err(e) => {
                abort_on_backend(out, conversation, Phase::Alternative, e);
                return Ok(());
            }
        };
        out.ledger.tries_used += 1;
        out.ledger.record(completion.usage, config.cost_rate_per_1k);
        let try_index = out.ledger.tries_used;
        let mut event = RepairEvent {
            try_index,
            conversation_id: conversation,
            phase: Phase::Alternative,
            patch: None,
            verdict: EventVerdict::Unparseable,
            feedback: None,
            prompt_tokens: completion.usage.prompt_tokens,
            completion_tokens: completion.usage.completion_tokens,
        };
        if let Ok(mut patch) = extract_patch(&completion.reply.content, bug.scenario) {
            patch.try_index = try_index;
            patch.origin = PatchOrigin::PlausibleGeneration;
            event.patch = Some(patch.text.clone());
            let result = match validator.validate(&patch) {
                Ok(r) => r,
                Err(e) => {
                    out.events.push(event);
                    out.abort = Some(RepairAbort {
                        kind: AbortKind::Validation,
                        message: e.to_string(),
                    });
                    return Ok(());
                }
            };
            event.verdict = EventVerdict::from(&result);
            if result.is_pass() {
                if seen.insert(normalize_patch(&patch.text)) {
                    debug!(bug = %bug.id, try_index, "additional plausible patch");
                    out.plausible.push(patch);
                } else {
                    event.verdict = EventVerdict::Duplicate;
                }
            }
        }
        out.events.push(event);
    }
    Ok(())
}

fn abort_on_backend(out: &mut RepairOutcome, conversation: usize, phase: Phase, error: LlmError) {
    warn!(bug = %out.bug_id, %error, "backend failed");
    out.events.push(RepairEvent {
        try_index: 0,
        conversation_id: conversation,
        phase,
        patch: None,
        verdict: EventVerdict::BackendError,
        feedback: Some(error.to_string()),
        prompt_tokens: 0,
        completion_tokens: 0,
    });
    out.abort = Some(RepairAbort {
        kind: AbortKind::Backend,
        message: error.to_string(),
    });
}

/// Canonical form for duplicate detection: whitespace runs outside string and character
/// literals collapse to one space, and the ends are trimmed.
pub fn normalize_patch(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut pending_space = false;
    for c in text.chars() {
        if let Some(q) = quote {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        if c == '"' || c == '\'' {
            quote = Some(c);
        }
        out.push(c);
    }
    if quote.is_some() {
        // unterminated literal
        out.truncate(out.trim_end().len());
    }
    out
}
