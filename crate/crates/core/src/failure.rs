//! Structured test-failure records and the parsers that recover them from raw runner
//! transcripts.
//!
//! Two runner dialects are understood:
//!
//! * the line protocol (`PASS <name>`, `FAIL <name>: <message>`, then optional
//!   `  at <file>:<line>` frame lines, innermost first), and
//! * JUnit-style stack traces, either Defects4J's `--- pkg.Class::method` headers or
//!   the JUnit 4 console's `1) method(pkg.Class)` headers.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bug::Patch;
use crate::engine::normalize_patch;

/// Compile diagnostics longer than this are cut before they reach a prompt.
pub const MAX_DIAGNOSTIC_LINES: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FailureError {
    #[error("no failure parsed")]
    NoFailure,
}

/// Error raised by validation infrastructure (not by the code under repair).
pub type InfraError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFailureInfo {
    pub test_name: String,
    pub error_message: String,
    /// The test-code line at the failure site; empty when it could not be located.
    #[serde(default)]
    pub failing_line: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_body: Option<String>,
    /// `file:line` of the frame `failing_line` was read from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_frame: Option<String>,
}

impl TestFailureInfo {
    pub fn new(test_name: impl Into<String>, error_message: impl Into<String>) -> Self {
        TestFailureInfo {
            test_name: test_name.into(),
            error_message: error_message.into(),
            failing_line: String::new(),
            test_body: None,
            failing_frame: None,
        }
    }

    pub fn with_failing_line(mut self, line: impl Into<String>) -> Self {
        self.failing_line = line.into();
        self
    }

    pub fn with_test_body(mut self, body: impl Into<String>) -> Self {
        self.test_body = Some(body.into());
        self
    }

    /// Exception or assertion identifier leading the error message.
    pub fn error_class(&self) -> &str {
        error_class(&self.error_message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ValidationResult {
    Pass,
    CompileError {
        message: String,
    },
    TestFailure {
        info: TestFailureInfo,
        all_failing: Vec<String>,
    },
    Timeout,
}

impl ValidationResult {
    pub fn is_pass(&self) -> bool {
        matches!(self, ValidationResult::Pass)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ValidationResult::Pass => "pass",
            ValidationResult::CompileError { .. } => "compile_error",
            ValidationResult::TestFailure { .. } => "test_failure",
            ValidationResult::Timeout => "timeout",
        }
    }
}

/// Validates candidate patches for one bug.
pub trait Validator {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError>;
}

impl<V: Validator + ?Sized> Validator for Box<V> {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError> {
        (**self).validate(patch)
    }
}

/// In-memory validator: looks verdicts up by normalized patch text.
#[derive(Debug, Clone)]
pub struct TableValidator {
    verdicts: HashMap<String, ValidationResult>,
    fallback: ValidationResult,
    pub calls: usize,
}

impl TableValidator {
    pub fn new(fallback: ValidationResult) -> Self {
        TableValidator {
            verdicts: HashMap::new(),
            fallback,
            calls: 0,
        }
    }

    pub fn with(mut self, patch: &str, verdict: ValidationResult) -> Self {
        self.insert(patch, verdict);
        self
    }

    pub fn insert(&mut self, patch: &str, verdict: ValidationResult) {
        self.verdicts.insert(normalize_patch(patch), verdict);
    }

    pub fn lookup(&self, patch: &str) -> &ValidationResult {
        self.verdicts
            .get(&normalize_patch(patch))
            .unwrap_or(&self.fallback)
    }
}

impl Validator for TableValidator {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError> {
        self.calls += 1;
        Ok(self.lookup(&patch.text).clone())
    }
}

/// Caches verdicts by exact patch text; validation is deterministic per workspace.
pub struct MemoValidator<V> {
    inner: V,
    cache: HashMap<String, ValidationResult>,
}

impl<V: Validator> MemoValidator<V> {
    pub fn new(inner: V) -> Self {
        MemoValidator {
            inner,
            cache: HashMap::new(),
        }
    }

    pub fn into_inner(self) -> V {
        self.inner
    }
}

impl<V: Validator> Validator for MemoValidator<V> {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError> {
        if let Some(hit) = self.cache.get(&patch.text) {
            return Ok(hit.clone());
        }
        let verdict = self.inner.validate(patch)?;
        self.cache.insert(patch.text.clone(), verdict.clone());
        Ok(verdict)
    }
}

/// One stack frame pointing into a source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub file: String,
    pub line: usize,
}

/// A failing test as reported by the runner, before source lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportedFailure {
    pub test_name: String,
    pub message: String,
    /// Innermost first.
    pub frames: Vec<Frame>,
}

pub trait RunnerDialect {
    fn name(&self) -> &'static str;
    fn parse(&self, raw: &str) -> Vec<ReportedFailure>;
}

/// `PASS <name>` / `FAIL <name>: <message>` line protocol.
pub struct LineProtocol;

impl RunnerDialect for LineProtocol {
    fn name(&self) -> &'static str {
        "line-protocol"
    }

    fn parse(&self, raw: &str) -> Vec<ReportedFailure> {
        let mut out: Vec<ReportedFailure> = Vec::new();
        let mut in_failure = false;
        for line in raw.lines() {
            if let Some(rest) = line.strip_prefix("FAIL ") {
                let (name, message) = match rest.split_once(':') {
                    Some((name, msg)) => (name.trim(), msg.trim()),
                    None => (rest.trim(), ""),
                };
                if name.is_empty() || name.contains(char::is_whitespace) {
                    in_failure = false;
                    continue;
                }
                out.push(ReportedFailure {
                    test_name: name.to_string(),
                    message: message.to_string(),
                    frames: Vec::new(),
                });
                in_failure = true;
            } else if in_failure && line.starts_with(char::is_whitespace) {
                if let Some(frame) = line.trim().strip_prefix("at ").and_then(parse_file_line) {
                    if let Some(last) = out.last_mut() {
                        last.frames.push(frame);
                    }
                }
            } else {
                in_failure = false;
            }
        }
        out
    }
}

fn parse_file_line(s: &str) -> Option<Frame> {
    let (file, line) = s.trim().rsplit_once(':')?;
    let line = line.trim().parse().ok()?;
    if file.is_empty() {
        return None;
    }
    Some(Frame {
        file: file.to_string(),
        line,
    })
}

/// JUnit stack-trace transcripts (Defects4J `failing_tests` files and the JUnit 4 console).
pub struct JUnitTrace;

impl JUnitTrace {
    fn header(line: &str) -> Option<String> {
        if let Some(rest) = line.strip_prefix("--- ") {
            let (_, method) = rest.trim().rsplit_once("::")?;
            return Some(method.to_string());
        }
        // "1) testFoo(pkg.Class)"
        let (num, rest) = line.split_once(") ")?;
        if num.is_empty() || !num.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let (method, class) = rest.split_once('(')?;
        if !class.ends_with(')') || method.is_empty() {
            return None;
        }
        Some(method.trim().to_string())
    }

    /// `at pkg.Class.method(File.java:23)` → `pkg/File.java:23`.
    fn frame(line: &str) -> Option<Frame> {
        let body = line.trim().strip_prefix("at ")?;
        let (qualified, location) = body.split_once('(')?;
        let location = location.strip_suffix(')')?;
        let (file_name, line_no) = location.rsplit_once(':')?;
        let line_no: usize = line_no.parse().ok()?;
        let mut parts: Vec<&str> = qualified.split('.').collect();
        // drop method and class, keep the package
        parts.truncate(parts.len().saturating_sub(2));
        let file = if parts.is_empty() {
            file_name.to_string()
        } else {
            format!("{}/{}", parts.join("/"), file_name)
        };
        Some(Frame {
            file,
            line: line_no,
        })
    }
}

impl RunnerDialect for JUnitTrace {
    fn name(&self) -> &'static str {
        "junit"
    }

    fn parse(&self, raw: &str) -> Vec<ReportedFailure> {
        let mut out: Vec<ReportedFailure> = Vec::new();
        let mut expect_message = false;
        for line in raw.lines() {
            if let Some(name) = Self::header(line) {
                out.push(ReportedFailure {
                    test_name: name,
                    message: String::new(),
                    frames: Vec::new(),
                });
                expect_message = true;
                continue;
            }
            let Some(current) = out.last_mut() else {
                continue;
            };
            if expect_message {
                if !line.trim().is_empty() {
                    current.message = line.trim().to_string();
                    expect_message = false;
                }
                continue;
            }
            if let Some(frame) = Self::frame(line) {
                current.frames.push(frame);
            }
        }
        out
    }
}

/// Parses with every known dialect; the first dialect that finds failures wins.
pub fn parse_failures(raw: &str) -> Vec<ReportedFailure> {
    let dialects: [&dyn RunnerDialect; 2] = [&LineProtocol, &JUnitTrace];
    for dialect in dialects {
        let found = dialect.parse(raw);
        if !found.is_empty() {
            return found;
        }
    }
    Vec::new()
}

/// Resolves frame file references to test-source lines.
pub trait SourceLookup {
    /// Returns the resolved file label and the text of `line` (1-based).
    fn line(&self, file: &str, line: usize) -> Option<(String, String)>;
    fn file_text(&self, file: &str) -> Option<String>;
}

/// Looks files up under a directory: first as a relative path, then by path suffix.
pub struct DirLookup {
    root: PathBuf,
}

impl DirLookup {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirLookup { root: root.into() }
    }

    fn resolve(&self, file: &str) -> Option<PathBuf> {
        let direct = self.root.join(file);
        if direct.is_file() {
            return Some(direct);
        }
        let wanted = Path::new(file);
        let mut hits: Vec<PathBuf> = walkdir::WalkDir::new(&self.root)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file() && e.path().ends_with(wanted))
            .map(|e| e.into_path())
            .collect();
        hits.sort();
        hits.into_iter().next()
    }
}

impl SourceLookup for DirLookup {
    fn line(&self, file: &str, line: usize) -> Option<(String, String)> {
        let path = self.resolve(file)?;
        let text = fs::read_to_string(&path).ok()?;
        let content = text.lines().nth(line.checked_sub(1)?)?;
        let label = path
            .strip_prefix(&self.root)
            .unwrap_or(&path)
            .display()
            .to_string();
        Some((format!("{label}:{line}"), content.to_string()))
    }

    fn file_text(&self, file: &str) -> Option<String> {
        fs::read_to_string(self.resolve(file)?).ok()
    }
}

/// File contents held in memory, keyed by path.
#[derive(Debug, Default, Clone)]
pub struct MemoryLookup {
    pub files: HashMap<String, String>,
}

impl MemoryLookup {
    fn find(&self, file: &str) -> Option<(&String, &String)> {
        self.files.get_key_value(file).or_else(|| {
            let mut keys: Vec<_> = self
                .files
                .iter()
                .filter(|(k, _)| Path::new(k.as_str()).ends_with(file))
                .collect();
            keys.sort();
            keys.into_iter().next()
        })
    }
}

impl SourceLookup for MemoryLookup {
    fn line(&self, file: &str, line: usize) -> Option<(String, String)> {
        let (key, text) = self.find(file)?;
        let content = text.lines().nth(line.checked_sub(1)?)?;
        Some((format!("{key}:{line}"), content.to_string()))
    }

    fn file_text(&self, file: &str) -> Option<String> {
        self.find(file).map(|(_, t)| t.clone())
    }
}

/// Builds the structured record for one reported failure. The failing line comes from
/// the innermost frame that resolves into the test sources.
pub fn describe_failure(
    failure: &ReportedFailure,
    sources: &dyn SourceLookup,
    include_body: bool,
) -> TestFailureInfo {
    let message = if failure.message.is_empty() {
        "test failed".to_string()
    } else {
        failure.message.clone()
    };
    let mut info = TestFailureInfo::new(failure.test_name.clone(), message);
    for frame in &failure.frames {
        if let Some((label, text)) = sources.line(&frame.file, frame.line) {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                continue;
            }
            info.failing_line = trimmed.to_string();
            info.failing_frame = Some(label);
            if include_body {
                info.test_body = sources
                    .file_text(&frame.file)
                    .and_then(|t| extract_test_body(&t, &failure.test_name, frame.line));
            }
            break;
        }
    }
    info
}

/// Extracts the first reported failure from a runner transcript.
pub fn extract_failure_info(
    raw_output: &str,
    test_sources: &Path,
) -> Result<TestFailureInfo, FailureError> {
    extract_failure_with(raw_output, &DirLookup::new(test_sources), false)
}

pub fn extract_failure_with(
    raw_output: &str,
    sources: &dyn SourceLookup,
    include_body: bool,
) -> Result<TestFailureInfo, FailureError> {
    let failures = parse_failures(raw_output);
    let first = failures.first().ok_or(FailureError::NoFailure)?;
    Ok(describe_failure(first, sources, include_body))
}

/// Picks the primary failure (lexicographically smallest test name) and the sorted,
/// de-duplicated names of every failing test.
pub fn primary_failure(failures: &[ReportedFailure]) -> Option<(&ReportedFailure, Vec<String>)> {
    let primary = failures
        .iter()
        .min_by(|a, b| a.test_name.cmp(&b.test_name))?;
    let names: BTreeSet<&str> = failures.iter().map(|f| f.test_name.as_str()).collect();
    Some((primary, names.into_iter().map(str::to_string).collect()))
}

/// Text of the test function that encloses `line`, found by scanning up to a line
/// mentioning `test_name(` and then balancing braces.
pub fn extract_test_body(file_text: &str, test_name: &str, line: usize) -> Option<String> {
    let lines: Vec<&str> = file_text.lines().collect();
    if line == 0 || line > lines.len() {
        return None;
    }
    let needle = format!("{test_name}(");
    let start = (0..line).rev().find(|&i| lines[i].contains(&needle))?;
    let mut depth: i64 = 0;
    let mut opened = false;
    for (i, l) in lines.iter().enumerate().skip(start) {
        for c in strip_literals(l).chars() {
            match c {
                '{' => {
                    depth += 1;
                    opened = true;
                }
                '}' => depth -= 1,
                _ => {}
            }
        }
        if opened && depth <= 0 {
            return Some(lines[start..=i].join("\n"));
        }
    }
    None
}

fn strip_literals(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in line.chars() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c == '"' || c == '\'' => quote = Some(c),
            None => out.push(c),
        }
    }
    out
}

/// Leading exception/assertion identifier: everything before the first `:` or space.
pub fn error_class(message: &str) -> &str {
    let trimmed = message.trim();
    let end = trimmed
        .find(|c: char| c == ':' || c.is_whitespace())
        .unwrap_or(trimmed.len());
    &trimmed[..end]
}

/// True iff the result is a test failure of the same test with the same error class.
pub fn same_original_failure(result: &ValidationResult, original: &TestFailureInfo) -> bool {
    match result {
        ValidationResult::TestFailure { info, .. } => {
            info.test_name == original.test_name && info.error_class() == original.error_class()
        }
        _ => false,
    }
}

/// Keeps the first [`MAX_DIAGNOSTIC_LINES`] lines.
pub fn truncate_diagnostics(text: &str) -> String {
    let lines: Vec<&str> = text.trim_end().lines().collect();
    if lines.len() <= MAX_DIAGNOSTIC_LINES {
        return lines.join("\n");
    }
    let mut out = lines[..MAX_DIAGNOSTIC_LINES].join("\n");
    out.push_str(&format!(
        "\n... ({} more lines)",
        lines.len() - MAX_DIAGNOSTIC_LINES
    ));
    out
}
