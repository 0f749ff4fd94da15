//! Prompt rendering: system message, initial repair prompt, validation feedback, the
//! alternative-patch instruction, and patch extraction from model replies.
//!
//! Every renderer is pure; golden copies of the rendered text live in
//! `fixtures/prompts/`.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::bug::{BugInstance, FewShotExample, Patch, PatchOrigin, RepairScenario, SplitContext};
use crate::failure::{
    same_original_failure, truncate_diagnostics, TestFailureInfo, ValidationResult,
};

pub const INFILL_MARKER: &str = ">>> [ INFILL ] <<<";
pub const SYSTEM_APR_TOOL: &str = "You are an Automated Program Repair tool";
pub const SYSTEM_ASSISTANT: &str = "You are a helpful assistant";
pub const STILL_FAILS: &str = "It still does not fix the original test failure.";
pub const STILL_INCORRECT: &str = "The fixed version is still not correct.";
pub const TIMEOUT_FEEDBACK: &str = "The fixed version causes the test suite to time out.";
pub const UNPARSEABLE_FEEDBACK: &str =
    "The response did not contain a code fix. Please provide the fix inside a code block.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("variant asks for {requested} few-shot examples but the bug has {available}")]
    NotEnoughShots { requested: usize, available: usize },
    #[error("feedback requested for a passing patch")]
    FeedbackOnPass,
    #[error("alternative instruction needs at least one plausible patch")]
    NoPlausiblePatches,
    #[error("unparseable response")]
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptLevel {
    BasePrompt,
    NameErr,
    NameErrFailLine,
    NameErrTestBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemMessage {
    Assistant,
    AprTool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackLevel {
    BaseFeedback,
    NameErr,
    NameErrFailLine,
    Dynamic,
}

macro_rules! kebab_names {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),* }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($name => Some(<$ty>::$variant),)* _ => None }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

kebab_names!(PromptLevel {
    BasePrompt => "base-prompt",
    NameErr => "name-err",
    NameErrFailLine => "name-err-fail-line",
    NameErrTestBody => "name-err-test-body",
});

kebab_names!(FeedbackLevel {
    BaseFeedback => "base-feedback",
    NameErr => "name-err",
    NameErrFailLine => "name-err-fail-line",
    Dynamic => "dynamic",
});

kebab_names!(SystemMessage {
    Assistant => "assistant",
    AprTool => "apr-tool",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub level: PromptLevel,
    pub shots: usize,
    pub system_msg: SystemMessage,
}

impl Default for PromptVariant {
    fn default() -> Self {
        PromptVariant {
            level: PromptLevel::NameErrFailLine,
            shots: 1,
            system_msg: SystemMessage::AprTool,
        }
    }
}

impl PromptVariant {
    /// Same variant with `shots` capped at what the bug provides.
    pub fn clamped_to(self, bug: &BugInstance) -> Self {
        PromptVariant {
            shots: self.shots.min(bug.few_shot.len()),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackVariant {
    pub level: FeedbackLevel,
}

impl Default for FeedbackVariant {
    fn default() -> Self {
        FeedbackVariant {
            level: FeedbackLevel::Dynamic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub role: PromptRole,
}

impl RenderedPrompt {
    fn user(text: String) -> Self {
        RenderedPrompt {
            text,
            role: PromptRole::User,
        }
    }
}

pub fn system_message(variant: &PromptVariant) -> RenderedPrompt {
    let text = match variant.system_msg {
        SystemMessage::AprTool => SYSTEM_APR_TOOL,
        SystemMessage::Assistant => SYSTEM_ASSISTANT,
    };
    RenderedPrompt {
        text: text.to_string(),
        role: PromptRole::System,
    }
}

fn unit(scenario: RepairScenario) -> &'static str {
    match scenario {
        RepairScenario::SingleLine => "line",
        RepairScenario::SingleHunk => "hunk",
        RepairScenario::SingleFunction => "function",
    }
}

fn fenced(out: &mut String, code: &str) {
    out.push_str("```\n");
    out.push_str(code);
    if !code.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
}

fn render_shots(out: &mut String, examples: &[FewShotExample], scenario: RepairScenario) {
    let unit = unit(scenario);
    for (i, ex) in examples.iter().enumerate() {
        let _ = writeln!(out, "Example fix {}:", i + 1);
        let _ = writeln!(out, "Buggy {unit}:");
        fenced(out, &ex.buggy);
        let _ = writeln!(out, "Fixed {unit}:");
        fenced(out, &ex.fixed);
        out.push('\n');
    }
}

fn render_name(out: &mut String, lead: &str, info: &TestFailureInfo) {
    let _ = writeln!(out, "{lead} `{}`", info.test_name);
}

fn render_fail_line(out: &mut String, info: &TestFailureInfo) {
    out.push_str("on this test line:\n");
    fenced(out, &info.failing_line);
}

fn render_error(out: &mut String, info: &TestFailureInfo) {
    out.push_str("with the following test error:\n");
    fenced(out, &info.error_message);
}

/// Failure information block for the initial prompt at the given level.
fn render_failure(out: &mut String, info: &TestFailureInfo, level: PromptLevel) {
    match level {
        PromptLevel::BasePrompt => {}
        PromptLevel::NameErr => {
            render_name(out, "The code fails on this test:", info);
            render_error(out, info);
        }
        PromptLevel::NameErrFailLine => {
            render_name(out, "The code fails on this test:", info);
            render_fail_line(out, info);
            render_error(out, info);
        }
        PromptLevel::NameErrTestBody => {
            render_name(out, "The code fails on this test:", info);
            render_error(out, info);
            out.push_str("Here is the failing test:\n");
            fenced(out, info.test_body.as_deref().unwrap_or_default());
        }
    }
}

/// Level actually used once missing failure details are taken into account.
fn effective_level(bug_id: &str, info: &TestFailureInfo, level: PromptLevel) -> PromptLevel {
    match level {
        PromptLevel::NameErrFailLine if info.failing_line.is_empty() => {
            warn!(
                bug = bug_id,
                "no failing test line; using test name and error only"
            );
            PromptLevel::NameErr
        }
        PromptLevel::NameErrTestBody if info.test_body.is_none() => {
            warn!(bug = bug_id, "no failing test body available");
            effective_level(bug_id, info, PromptLevel::NameErrFailLine)
        }
        other => other,
    }
}

/// Renders the initial repair prompt for `bug` with the function split in `context`.
pub fn build_initial_prompt(
    bug: &BugInstance,
    context: &SplitContext,
    failure: &TestFailureInfo,
    variant: &PromptVariant,
) -> Result<RenderedPrompt, PromptError> {
    if variant.shots > bug.few_shot.len() {
        return Err(PromptError::NotEnoughShots {
            requested: variant.shots,
            available: bug.few_shot.len(),
        });
    }
    let scenario = bug.scenario;
    let level = effective_level(&bug.id, failure, variant.level);
    let mut out = String::new();
    render_shots(&mut out, &bug.few_shot[..variant.shots], scenario);

    if scenario.is_infill() {
        let unit = unit(scenario);
        let _ = writeln!(
            out,
            "The following code contains a buggy {unit} that has been removed:"
        );
        let mut code = context.prefix.clone();
        code.push_str(context.indent());
        code.push_str(INFILL_MARKER);
        code.push('\n');
        code.push_str(&context.suffix);
        fenced(&mut out, &code);
        let _ = writeln!(
            out,
            "This was the original buggy {unit} which was removed by the infill location:"
        );
        fenced(&mut out, context.buggy_trimmed());
        render_failure(&mut out, failure, level);
        let _ = write!(
            out,
            "Please provide the correct {unit} at the infill location."
        );
    } else {
        out.push_str("The following function contains a bug:\n");
        fenced(&mut out, &context.function_text());
        render_failure(&mut out, failure, level);
        out.push_str("Please provide a correct version of the entire function.");
    }
    Ok(RenderedPrompt::user(out))
}

fn new_failure_details(out: &mut String, info: &TestFailureInfo, with_line: bool) {
    render_name(out, " The code fails on this test:", info);
    if with_line && !info.failing_line.is_empty() {
        render_fail_line(out, info);
    }
    render_error(out, info);
}

/// Feedback for a failed validation.
pub fn build_feedback(
    result: &ValidationResult,
    original: &TestFailureInfo,
    variant: &FeedbackVariant,
) -> Result<RenderedPrompt, PromptError> {
    let mut out = String::new();
    match result {
        ValidationResult::Pass => return Err(PromptError::FeedbackOnPass),
        ValidationResult::CompileError { message } => {
            out.push_str("The fixed version does not compile. The compiler reported:\n");
            fenced(&mut out, &truncate_diagnostics(message));
        }
        ValidationResult::Timeout => out.push_str(TIMEOUT_FEEDBACK),
        ValidationResult::TestFailure { info, .. } => match variant.level {
            FeedbackLevel::BaseFeedback => out.push_str(STILL_INCORRECT),
            FeedbackLevel::NameErr => {
                out.push_str(STILL_INCORRECT);
                new_failure_details(&mut out, info, false);
            }
            FeedbackLevel::NameErrFailLine => {
                out.push_str(STILL_INCORRECT);
                new_failure_details(&mut out, info, true);
            }
            FeedbackLevel::Dynamic => {
                if same_original_failure(result, original) {
                    out.push_str(STILL_FAILS);
                } else {
                    out.push_str(STILL_INCORRECT);
                    new_failure_details(&mut out, info, true);
                }
            }
        },
    }
    Ok(RenderedPrompt::user(out.trim_end().to_string()))
}

/// Feedback used when no code could be extracted from a reply.
pub fn unparseable_feedback() -> RenderedPrompt {
    RenderedPrompt::user(UNPARSEABLE_FEEDBACK.to_string())
}

pub fn alt_instruction_sentence(scenario: RepairScenario) -> &'static str {
    match scenario {
        RepairScenario::SingleLine => "Please generate an alternative fix line.",
        RepairScenario::SingleHunk => "Please generate an alternative fix hunk.",
        RepairScenario::SingleFunction => "Please generate an alternative fixed function.",
    }
}

/// Initial prompt followed by every plausible patch so far and the request for another.
pub fn build_alt_instruction(
    initial: &RenderedPrompt,
    plausible: &[Patch],
) -> Result<RenderedPrompt, PromptError> {
    let first = plausible.first().ok_or(PromptError::NoPlausiblePatches)?;
    let mut out = initial.text.clone();
    out.push_str("\n\nIt can be fixed by these possible correct versions:\n");
    for (i, patch) in plausible.iter().enumerate() {
        let _ = writeln!(out, "Correct version {}:", i + 1);
        fenced(&mut out, &patch.text);
    }
    out.push_str(alt_instruction_sentence(first.scenario));
    Ok(RenderedPrompt::user(out))
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn looks_like_prose(t: &str) -> bool {
    let words = t.split_whitespace().count();
    let code_marks = t.contains([';', '{', '}', '=']);
    !code_marks && words >= 3 && t.ends_with(['.', ':', '?', '!'])
}

fn looks_like_code(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() || t.ends_with(':') || looks_like_prose(t) {
        return false;
    }
    t.contains([';', '{', '}', '(', ')', '=', '[', ']', '<', '>'])
        || line.starts_with(char::is_whitespace)
}

fn tidy(lines: &[&str]) -> String {
    let trimmed: Vec<&str> = lines.iter().map(|l| l.trim_end()).collect();
    let start = trimmed.iter().position(|l| !l.is_empty());
    let end = trimmed.iter().rposition(|l| !l.is_empty());
    match (start, end) {
        (Some(s), Some(e)) => trimmed[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Pulls the code out of a model reply.
///
/// First fenced block wins; otherwise the longest run of code-looking lines. A reply that
/// is a single line is taken as-is unless it reads as a sentence.
pub fn extract_patch_text(model_output: &str) -> Result<String, PromptError> {
    let lines: Vec<&str> = model_output.lines().collect();

    if let Some(open) = lines.iter().position(|l| is_fence(l)) {
        let body_end = lines[open + 1..]
            .iter()
            .position(|l| is_fence(l))
            .map(|i| open + 1 + i)
            .unwrap_or(lines.len());
        let code = tidy(&lines[open + 1..body_end]);
        if !code.is_empty() {
            return Ok(code);
        }
    }

    let nonblank: Vec<&str> = lines
        .iter()
        .copied()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if nonblank.len() == 1 {
        let t = nonblank[0].trim();
        if looks_like_prose(t) || t.ends_with(':') {
            return Err(PromptError::Unparseable);
        }
        let line = nonblank[0].trim_end();
        let unquoted = line
            .trim()
            .strip_prefix('`')
            .and_then(|s| s.strip_suffix('`'))
            .map(str::to_string);
        return Ok(unquoted.unwrap_or_else(|| line.to_string()));
    }

    // Longest run of code lines; blank lines may sit inside a run.
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < lines.len() {
        if !looks_like_code(lines[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut last_code = i;
        let mut j = i + 1;
        while j < lines.len() && (looks_like_code(lines[j]) || lines[j].trim().is_empty()) {
            if looks_like_code(lines[j]) {
                last_code = j;
            }
            j += 1;
        }
        let len = last_code + 1 - start;
        if best.is_none_or(|(s, e)| len > e - s) {
            best = Some((start, last_code + 1));
        }
        i = j;
    }
    match best {
        Some((s, e)) => Ok(tidy(&lines[s..e])),
        None => Err(PromptError::Unparseable),
    }
}

pub fn extract_patch(model_output: &str, scenario: RepairScenario) -> Result<Patch, PromptError> {
    let text = extract_patch_text(model_output)?;
    Patch::new(text, scenario, PatchOrigin::ConversationalRepair, 0)
        .map_err(|_| PromptError::Unparseable)
}
