//! Bug instances, repair scenarios, corpus manifests and textual patch application.
//!
//! All line arithmetic is 1-based inclusive and happens after line endings have been
//! normalized to `\n`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::normalize_patch;

pub const DEFAULT_TIMEOUT_S: u64 = 300;

#[derive(Debug, Error)]
pub enum BugError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("bug {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate bug id \"{0}\"")]
    DuplicateId(String),
    #[error("span {span} out of bounds for a file of {lines} lines")]
    SpanOutOfBounds { span: LineSpan, lines: usize },
    #[error("workspace not initialized: {0}")]
    WorkspaceNotInitialized(PathBuf),
    #[error("patch scenario {patch} does not match bug scenario {bug}")]
    ScenarioMismatch {
        bug: RepairScenario,
        patch: RepairScenario,
    },
    #[error("patch text is empty after normalization")]
    EmptyPatch,
}

impl BugError {
    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BugError::Io {
            path: path.into(),
            source,
        }
    }
}

/// The three repair settings: a single buggy line, a contiguous hunk, or a whole function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairScenario {
    SingleLine,
    SingleHunk,
    SingleFunction,
}

impl RepairScenario {
    /// Infill scenarios replace part of a function with the infill marker.
    pub fn is_infill(self) -> bool {
        !matches!(self, RepairScenario::SingleFunction)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RepairScenario::SingleLine => "single-line",
            RepairScenario::SingleHunk => "single-hunk",
            RepairScenario::SingleFunction => "single-function",
        }
    }

    /// Short form used by the command line (`sl`, `sh`, `sf`).
    pub fn short(self) -> &'static str {
        match self {
            RepairScenario::SingleLine => "sl",
            RepairScenario::SingleHunk => "sh",
            RepairScenario::SingleFunction => "sf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sl" | "single-line" => Some(RepairScenario::SingleLine),
            "sh" | "single-hunk" => Some(RepairScenario::SingleHunk),
            "sf" | "single-function" => Some(RepairScenario::SingleFunction),
            _ => None,
        }
    }
}

impl fmt::Display for RepairScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based inclusive line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn new(start: usize, end: usize) -> Self {
        LineSpan { start, end }
    }

    pub fn line(line: usize) -> Self {
        LineSpan::new(line, line)
    }

    pub fn is_well_formed(&self) -> bool {
        self.start >= 1 && self.start <= self.end
    }

    pub fn contains(&self, other: &LineSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

impl From<(usize, usize)> for LineSpan {
    fn from((start, end): (usize, usize)) -> Self {
        LineSpan { start, end }
    }
}

impl From<LineSpan> for (usize, usize) {
    fn from(span: LineSpan) -> Self {
        (span.start, span.end)
    }
}

impl fmt::Display for LineSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// A historical (buggy, fixed) pair shown to the model before the target bug.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub buggy: String,
    pub fixed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugInstance {
    pub id: String,
    /// Directory the project is copied from; `source_path` and the commands are relative to it.
    #[serde(skip)]
    pub project_root: PathBuf,
    pub source_path: PathBuf,
    pub bug_span: LineSpan,
    pub function_span: LineSpan,
    pub scenario: RepairScenario,
    pub build_cmd: String,
    pub test_cmd: String,
    pub failing_tests: Vec<String>,
    pub few_shot: Vec<FewShotExample>,
    pub reference_patch: Option<String>,
    pub timeout_s: u64,
}

impl BugInstance {
    /// Checks every structural invariant that does not need the source file.
    pub fn check(&self) -> Result<(), BugError> {
        let invalid = |reason: String| BugError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if !self.bug_span.is_well_formed() {
            return Err(invalid(format!("malformed bug_span {}", self.bug_span)));
        }
        if !self.function_span.is_well_formed() {
            return Err(invalid(format!(
                "malformed function_span {}",
                self.function_span
            )));
        }
        if !self.function_span.contains(&self.bug_span) {
            return Err(invalid(format!(
                "bug_span {} is not inside function_span {}",
                self.bug_span, self.function_span
            )));
        }
        match self.scenario {
            RepairScenario::SingleLine if self.bug_span.len() != 1 => {
                return Err(invalid(format!(
                    "single-line bug spans {} lines",
                    self.bug_span.len()
                )));
            }
            RepairScenario::SingleFunction if self.bug_span != self.function_span => {
                return Err(invalid(
                    "single-function bug_span must equal function_span".into(),
                ));
            }
            _ => {}
        }
        if self.failing_tests.is_empty() {
            return Err(invalid("failing_tests is empty".into()));
        }
        if self.source_path.is_absolute()
            || self
                .source_path
                .components()
                .any(|c| matches!(c, Component::ParentDir))
        {
            return Err(invalid(format!(
                "source_path {} must be relative and stay inside the project",
                self.source_path.display()
            )));
        }
        Ok(())
    }

    /// Absolute path of the buggy file in the original project.
    pub fn original_source_path(&self) -> PathBuf {
        self.project_root.join(&self.source_path)
    }

    pub fn read_source(&self) -> Result<String, BugError> {
        let path = self.original_source_path();
        let raw = fs::read_to_string(&path).map_err(|e| BugError::io(&path, e))?;
        Ok(normalize_line_endings(&raw))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    source_path: PathBuf,
    bug_span: LineSpan,
    function_span: LineSpan,
    scenario: RepairScenario,
    build_cmd: String,
    test_cmd: String,
    failing_tests: Vec<String>,
    few_shot: Vec<FewShotExample>,
    #[serde(default)]
    reference_patch: Option<String>,
    #[serde(default)]
    timeout_s: Option<u64>,
}

/// Loads a corpus manifest. The manifest's directory is the project root of every bug.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<BugInstance>, BugError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| BugError::io(manifest_path, e))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let root = if root.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        root
    };
    parse_corpus(&text, manifest_path, &root)
}

/// Parses manifest text; `origin` is only used in error messages.
pub fn parse_corpus(
    text: &str,
    origin: &Path,
    project_root: &Path,
) -> Result<Vec<BugInstance>, BugError> {
    parse_corpus_with(text, origin, project_root, BugInstance::read_source)
}

/// Like [`parse_corpus`], with source text supplied by `read` instead of the filesystem.
pub fn parse_corpus_with(
    text: &str,
    origin: &Path,
    project_root: &Path,
    read: impl Fn(&BugInstance) -> Result<String, BugError>,
) -> Result<Vec<BugInstance>, BugError> {
    let entries: Vec<ManifestEntry> = serde_json::from_str(text).map_err(|e| BugError::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut seen = HashSet::new();
    let mut bugs = Vec::with_capacity(entries.len());
    for entry in entries {
        if !seen.insert(entry.id.clone()) {
            return Err(BugError::DuplicateId(entry.id));
        }
        let bug = BugInstance {
            id: entry.id,
            project_root: project_root.to_path_buf(),
            source_path: entry.source_path,
            bug_span: entry.bug_span,
            function_span: entry.function_span,
            scenario: entry.scenario,
            build_cmd: entry.build_cmd,
            test_cmd: entry.test_cmd,
            failing_tests: entry.failing_tests,
            few_shot: entry.few_shot,
            reference_patch: entry.reference_patch,
            timeout_s: entry.timeout_s.unwrap_or(DEFAULT_TIMEOUT_S),
        };
        bug.check()?;
        let source = read(&bug).map_err(|e| BugError::Invalid {
            id: bug.id.clone(),
            reason: e.to_string(),
        })?;
        let lines = line_count(&source);
        if bug.function_span.end > lines {
            return Err(BugError::Invalid {
                id: bug.id.clone(),
                reason: format!(
                    "function_span {} exceeds the {} lines of {}",
                    bug.function_span,
                    lines,
                    bug.source_path.display()
                ),
            });
        }
        bugs.push(bug);
    }
    Ok(bugs)
}

pub fn normalize_line_endings(text: &str) -> String {
    text.replace("\r\n", "\n")
}

fn line_count(text: &str) -> usize {
    text.split_inclusive('\n').count()
}

/// The enclosing function cut around the bug: `prefix + buggy + suffix` is the function text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitContext {
    pub prefix: String,
    pub buggy: String,
    pub suffix: String,
}

impl SplitContext {
    pub fn function_text(&self) -> String {
        format!("{}{}{}", self.prefix, self.buggy, self.suffix)
    }

    /// Buggy code without its final line terminator.
    pub fn buggy_trimmed(&self) -> &str {
        self.buggy.strip_suffix('\n').unwrap_or(&self.buggy)
    }

    /// Leading whitespace of the first buggy line.
    pub fn indent(&self) -> &str {
        let first = self.buggy.lines().next().unwrap_or("");
        &first[..first.len() - first.trim_start().len()]
    }
}

/// Splits the function region of `source` around `bug_span`.
pub fn split_source(
    source: &str,
    function_span: LineSpan,
    bug_span: LineSpan,
) -> Result<SplitContext, BugError> {
    let lines: Vec<&str> = source.split_inclusive('\n').collect();
    for span in [function_span, bug_span] {
        if !span.is_well_formed() || span.end > lines.len() {
            return Err(BugError::SpanOutOfBounds {
                span,
                lines: lines.len(),
            });
        }
    }
    let prefix = lines[function_span.start - 1..bug_span.start - 1].concat();
    let buggy = lines[bug_span.start - 1..bug_span.end].concat();
    let suffix = lines[bug_span.end..function_span.end].concat();
    Ok(SplitContext {
        prefix,
        buggy,
        suffix,
    })
}

/// Reads the bug's source file and splits its enclosing function.
pub fn split_context(bug: &BugInstance) -> Result<SplitContext, BugError> {
    split_source(&bug.read_source()?, bug.function_span, bug.bug_span)
}

/// Replaces the lines of `span` in `source` with `replacement`.
///
/// The replacement is textual: it may have any number of lines. A line terminator is
/// appended when the replaced span ended with one and the replacement does not.
pub fn patch_source(source: &str, span: LineSpan, replacement: &str) -> Result<String, BugError> {
    let lines: Vec<&str> = source.split_inclusive('\n').collect();
    if !span.is_well_formed() || span.end > lines.len() {
        return Err(BugError::SpanOutOfBounds {
            span,
            lines: lines.len(),
        });
    }
    let mut out = lines[..span.start - 1].concat();
    out.push_str(replacement);
    if lines[span.end - 1].ends_with('\n') && !replacement.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&lines[span.end..].concat());
    Ok(out)
}

/// Where a candidate patch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOrigin {
    ConversationalRepair,
    PlausibleGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub text: String,
    pub scenario: RepairScenario,
    pub origin: PatchOrigin,
    pub try_index: usize,
}

impl Patch {
    pub fn new(
        text: impl Into<String>,
        scenario: RepairScenario,
        origin: PatchOrigin,
        try_index: usize,
    ) -> Result<Self, BugError> {
        let text = text.into();
        if normalize_patch(&text).is_empty() {
            return Err(BugError::EmptyPatch);
        }
        Ok(Patch {
            text,
            scenario,
            origin,
            try_index,
        })
    }
}

/// Writes `original` with the bug span replaced by `patch` into the workspace copy.
pub fn apply_patch_to(
    original: &str,
    bug: &BugInstance,
    patch: &Patch,
    workspace: &Path,
) -> Result<PathBuf, BugError> {
    if patch.scenario != bug.scenario {
        return Err(BugError::ScenarioMismatch {
            bug: bug.scenario,
            patch: patch.scenario,
        });
    }
    let initialized = fs::read_dir(workspace)
        .map(|mut entries| entries.next().is_some())
        .unwrap_or(false);
    let target = workspace.join(&bug.source_path);
    if !initialized || !target.is_file() {
        return Err(BugError::WorkspaceNotInitialized(workspace.to_path_buf()));
    }
    let patched = patch_source(original, bug.bug_span, &patch.text)?;
    fs::write(&target, patched).map_err(|e| BugError::io(&target, e))?;
    Ok(target)
}

/// Applies `patch` to the workspace copy of the bug's source file, starting from the
/// untouched original in the project root.
pub fn apply_patch(
    bug: &BugInstance,
    patch: &Patch,
    workspace: &Path,
) -> Result<PathBuf, BugError> {
    let original = bug.read_source()?;
    apply_patch_to(&original, bug, patch, workspace)
}
