//! Browser front end over the toy corpus. Validation is table-driven here: no compiler
//! runs in the page, so each candidate's verdict comes from a user-editable table.
//!
//! All exports take and return JSON strings.

use std::collections::BTreeMap;
use std::path::Path;

use convrepair_core::failure::{describe_failure, parse_failures, primary_failure, MemoryLookup};
use convrepair_core::{
    conversational_repair, parse_corpus_with, run_ablation, BugError, EngineConfig, FeedbackLevel,
    FeedbackVariant, PromptLevel, PromptVariant, RepairTask, ScriptedBackend, SystemMessage,
    TableValidator, TestFailureInfo, ValidationResult, Validator,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const MANIFEST: &str = include_str!("../../../fixtures/toy/toy.json");

macro_rules! toy_files {
    ($($dir:literal: $src:literal, $test:literal;)*) => {
        &[$(
            (concat!($dir, "/src/", $src), include_str!(concat!("../../../fixtures/toy/", $dir, "/src/", $src))),
            (concat!($dir, "/tests/", $test), include_str!(concat!("../../../fixtures/toy/", $dir, "/tests/", $test))),
            (concat!("transcripts/", $dir), include_str!(concat!("../../../fixtures/transcripts/", $dir, ".txt"))),
        )*]
    };
}

const FILES: &[(&str, &str)] = toy_files! {
    "toy1": "clamp.c", "test_clamp.c";
    "toy2": "sum.c", "test_sum.c";
    "toy3": "vowels.c", "test_vowels.c";
    "toy4": "minmax.c", "test_minmax.c";
    "toy5": "leap.c", "test_leap.c";
};

fn file(path: &str) -> Result<&'static str, String> {
    FILES
        .iter()
        .find(|(p, _)| *p == path)
        .map(|(_, t)| *t)
        .ok_or_else(|| format!("no embedded file {path}"))
}

/// The toy bugs with their recorded original failures.
pub fn toy_tasks(include_body: bool) -> Result<Vec<RepairTask>, String> {
    let bugs = parse_corpus_with(MANIFEST, Path::new("toy.json"), Path::new(""), |bug| {
        file(&bug.source_path.to_string_lossy())
            .map(str::to_string)
            .map_err(|reason| BugError::Invalid {
                id: bug.id.clone(),
                reason,
            })
    })
    .map_err(|e| e.to_string())?;
    let lookup = MemoryLookup {
        files: FILES
            .iter()
            .map(|(p, t)| (p.to_string(), t.to_string()))
            .collect(),
    };
    bugs.into_iter()
        .map(|bug| {
            let dir = bug.id.replace('-', "");
            let failures = parse_failures(file(&format!("transcripts/{dir}"))?);
            let (primary, _) = primary_failure(&failures).ok_or("recorded run has no failure")?;
            let original = describe_failure(primary, &lookup, include_body);
            let source = file(&bug.source_path.to_string_lossy())?;
            RepairTask::new(bug, source, original).map_err(|e| e.to_string())
        })
        .collect()
}

fn task(bug_id: &str, include_body: bool) -> Result<RepairTask, String> {
    toy_tasks(include_body)?
        .into_iter()
        .find(|t| t.bug.id == bug_id)
        .ok_or_else(|| format!("unknown bug id `{bug_id}`"))
}

#[derive(Serialize)]
struct BugSummary<'a> {
    id: &'a str,
    scenario: &'a str,
    function: String,
    failing_test: &'a str,
    error: &'a str,
}

pub fn list_bugs() -> Result<String, String> {
    let tasks = toy_tasks(false)?;
    let out: Vec<_> = tasks
        .iter()
        .map(|t| BugSummary {
            id: &t.bug.id,
            scenario: t.bug.scenario.short(),
            function: t.context.function_text(),
            failing_test: &t.original.test_name,
            error: &t.original.error_message,
        })
        .collect();
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Rendered {
    system: String,
    prompt: String,
}

pub fn render(bug_id: &str, level: &str, shots: usize, system: &str) -> Result<String, String> {
    let level =
        PromptLevel::parse(level).ok_or_else(|| format!("unknown prompt level `{level}`"))?;
    let system_msg =
        SystemMessage::parse(system).ok_or_else(|| format!("unknown system message `{system}`"))?;
    let t = task(bug_id, level == PromptLevel::NameErrTestBody)?;
    let variant = PromptVariant {
        level,
        shots,
        system_msg,
    };
    let (system, initial) = t.render(&variant).map_err(|e| e.to_string())?;
    serde_json::to_string(&Rendered {
        system: system.text,
        prompt: initial.text,
    })
    .map_err(|e| e.to_string())
}

/// Verdict table entries, keyed by patch text:
/// `pass`, `same`, `timeout`, `compile: <diagnostic>`, `fail <test>: <message>`.
pub fn parse_verdict(text: &str, original: &TestFailureInfo) -> Result<ValidationResult, String> {
    let text = text.trim();
    if text == "pass" {
        return Ok(ValidationResult::Pass);
    }
    if text == "same" {
        return Ok(ValidationResult::TestFailure {
            info: original.clone(),
            all_failing: vec![original.test_name.clone()],
        });
    }
    if text == "timeout" {
        return Ok(ValidationResult::Timeout);
    }
    if let Some(message) = text.strip_prefix("compile:") {
        return Ok(ValidationResult::CompileError {
            message: message.trim().to_string(),
        });
    }
    if let Some(rest) = text.strip_prefix("fail ") {
        if let Some((name, message)) = rest.split_once(':') {
            let name = name.trim().to_string();
            return Ok(ValidationResult::TestFailure {
                info: TestFailureInfo::new(name.clone(), message.trim()),
                all_failing: vec![name],
            });
        }
    }
    Err(format!("unrecognized verdict `{text}`"))
}

/// The reference patch passes, anything unlisted fails like the original.
fn validator(
    t: &RepairTask,
    verdicts: &BTreeMap<String, String>,
) -> Result<TableValidator, String> {
    let mut v = TableValidator::new(parse_verdict("same", &t.original)?);
    if let Some(reference) = &t.bug.reference_patch {
        v.insert(reference, ValidationResult::Pass);
    }
    for (patch, verdict) in verdicts {
        v.insert(patch, parse_verdict(verdict, &t.original)?);
    }
    Ok(v)
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub max_tries: usize,
    pub max_conv_length: usize,
    pub feedback: String,
    pub prompt: String,
    pub shots: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let d = EngineConfig::default();
        SimConfig {
            max_tries: 10,
            max_conv_length: d.max_conv_length,
            feedback: d.feedback_variant.level.to_string(),
            prompt: d.prompt_variant.level.to_string(),
            shots: d.prompt_variant.shots,
            seed: 0,
        }
    }
}

impl SimConfig {
    fn engine(&self) -> Result<EngineConfig, String> {
        let config = EngineConfig {
            max_tries: self.max_tries,
            max_conv_length: self.max_conv_length,
            feedback_variant: FeedbackVariant {
                level: FeedbackLevel::parse(&self.feedback)
                    .ok_or_else(|| format!("unknown feedback variant `{}`", self.feedback))?,
            },
            prompt_variant: PromptVariant {
                level: PromptLevel::parse(&self.prompt)
                    .ok_or_else(|| format!("unknown prompt variant `{}`", self.prompt))?,
                shots: self.shots,
                ..PromptVariant::default()
            },
            ..EngineConfig::default()
        };
        config.check().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

fn parse_inputs(
    script: &str,
    verdicts: &str,
    config: &str,
) -> Result<(ScriptedBackend, BTreeMap<String, String>, SimConfig), String> {
    let config: SimConfig = if config.trim().is_empty() {
        SimConfig::default()
    } else {
        serde_json::from_str(config).map_err(|e| format!("config: {e}"))?
    };
    let backend = ScriptedBackend::from_json(script, Path::new("script"))
        .map_err(|e| e.to_string())?
        .with_seed(config.seed);
    let verdicts: BTreeMap<String, String> = if verdicts.trim().is_empty() {
        BTreeMap::new()
    } else {
        serde_json::from_str(verdicts).map_err(|e| format!("verdicts: {e}"))?
    };
    Ok((backend, verdicts, config))
}

/// One scripted repair run; returns the outcome with its event log.
pub fn simulate_run(
    bug_id: &str,
    script: &str,
    verdicts: &str,
    config: &str,
) -> Result<String, String> {
    let (backend, verdicts, config) = parse_inputs(script, verdicts, config)?;
    let engine = config.engine()?;
    let t = task(
        bug_id,
        engine.prompt_variant.level == PromptLevel::NameErrTestBody,
    )?;
    let mut v = validator(&t, &verdicts)?;
    let outcome =
        conversational_repair(&t, &backend, &mut v, &engine).map_err(|e| e.to_string())?;
    serde_json::to_string(&outcome).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepRow {
    max_conv_length: usize,
    bugs_plausible: usize,
    mean_tries: f64,
    mean_dollars: f64,
}

/// Repairs every toy bug at conversation lengths `1..=max_len`.
pub fn sweep_lengths(
    script: &str,
    verdicts: &str,
    config: &str,
    max_len: usize,
) -> Result<String, String> {
    let (backend, verdicts, config) = parse_inputs(script, verdicts, config)?;
    let base = config.engine()?;
    let grid: Vec<EngineConfig> = (1..=max_len.max(1))
        .map(|len| EngineConfig {
            label: format!("len{len}"),
            max_conv_length: len,
            ..base.clone()
        })
        .collect();
    let tasks = toy_tasks(base.prompt_variant.level == PromptLevel::NameErrTestBody)?;
    let runs = run_ablation(&tasks, &backend, &grid, |t| {
        validator(t, &verdicts)
            .map(|v| Box::new(v) as Box<dyn Validator>)
            .map_err(Into::into)
    })
    .map_err(|e| e.to_string())?;
    let rows: Vec<_> = runs
        .iter()
        .map(|r| SweepRow {
            max_conv_length: r.row.max_conv_length,
            bugs_plausible: r.row.bugs_plausible,
            mean_tries: r.row.mean_tries,
            mean_dollars: r.row.mean_dollars,
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bugs() -> Result<String, JsError> {
    js(list_bugs())
}

#[wasm_bindgen]
pub fn render_prompt(
    bug_id: &str,
    level: &str,
    shots: usize,
    system: &str,
) -> Result<String, JsError> {
    js(render(bug_id, level, shots, system))
}

#[wasm_bindgen]
pub fn simulate(
    bug_id: &str,
    script: &str,
    verdicts: &str,
    config: &str,
) -> Result<String, JsError> {
    js(simulate_run(bug_id, script, verdicts, config))
}

#[wasm_bindgen]
pub fn sweep(
    script: &str,
    verdicts: &str,
    config: &str,
    max_len: usize,
) -> Result<String, JsError> {
    js(sweep_lengths(script, verdicts, config, max_len))
}
