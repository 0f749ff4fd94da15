//! `repair`: run the repair loop over selected bugs and append one record per bug.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use convrepair_core::{
    conversational_repair, load_corpus, AbortKind, BackendConfig, BugInstance, ChatBackend,
    MemoValidator, RepairOutcome, RepairScenario,
};
use tracing::{info, warn};

use crate::record::{now, ConfigSnapshot, JsonlWriter, RunRecord};
use crate::settings::Knobs;
use crate::workspace::Workspace;

#[derive(Args, Debug)]
pub struct RepairArgs {
    #[command(flatten)]
    pub knobs: Knobs,
    /// Bug id to repair (repeatable; default: every bug in the corpus).
    #[arg(long = "bug")]
    pub bugs: Vec<String>,
    /// Only bugs of this scenario: sl, sh or sf.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Results file; records are appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Bugs repaired concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Keep every workspace, not only those of failed runs.
    #[arg(long)]
    pub keep_workspaces: bool,
}

pub fn select_bugs(
    corpus: Vec<BugInstance>,
    ids: &[String],
    scenario: Option<&str>,
) -> Result<Vec<BugInstance>> {
    let scenario = match scenario {
        Some(s) => match RepairScenario::parse(s) {
            Some(sc) => Some(sc),
            None => bail!("unknown scenario `{s}` (expected sl, sh or sf)"),
        },
        None => None,
    };
    for id in ids {
        if !corpus.iter().any(|b| &b.id == id) {
            bail!("unknown bug id `{id}`");
        }
    }
    Ok(corpus
        .into_iter()
        .filter(|b| ids.is_empty() || ids.contains(&b.id))
        .filter(|b| scenario.is_none_or(|s| b.scenario == s))
        .collect())
}

pub fn run(args: RepairArgs, config_file: Option<&std::path::Path>) -> Result<bool> {
    let knobs = args.knobs.with_config(config_file)?;
    let corpus = load_corpus(knobs.corpus()?)?;
    let bugs = select_bugs(corpus, &args.bugs, args.scenario.as_deref())?;
    for bug in &bugs {
        knobs.engine_config(bug.scenario)?;
    }
    let backend_config = knobs.backend_config()?;
    let backend = backend_config.build()?;
    let mut writer = JsonlWriter::open(&args.out)?;
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut all_ok = true;
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..args.jobs.min(bugs.len().max(1)) {
            let tx = tx.clone();
            let (next, bugs, knobs, backend_config, backend) =
                (&next, &bugs, &knobs, &backend_config, backend.as_ref());
            let keep = args.keep_workspaces;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(bug) = bugs.get(i) else { break };
                let record = repair_bug(bug, knobs, backend_config, backend, keep);
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            if record.error.is_some() {
                all_ok = false;
            }
            info!(bug = %record.bug_id, plausible = record.plausible.len(), tries = record.tries, "finished");
            writer.append(&record)?;
        }
        Ok(())
    })?;
    Ok(all_ok)
}

fn repair_bug(
    bug: &BugInstance,
    knobs: &Knobs,
    backend_config: &BackendConfig,
    backend: &dyn ChatBackend,
    keep: bool,
) -> RunRecord {
    let started_at = now();
    let clock = Instant::now();
    let mut config = None;
    let mut workspace = None;
    let result = (|| -> Result<RepairOutcome> {
        let engine = knobs.engine_config(bug.scenario)?;
        config = Some(ConfigSnapshot {
            engine: engine.clone(),
            backend: backend_config.into(),
        });
        let ws = workspace.insert(Workspace::create(bug, knobs.workspace_root.as_deref())?);
        let task = ws.task(bug)?;
        let mut validator = MemoValidator::new(ws.validator(bug, false)?);
        Ok(conversational_repair(
            &task,
            backend,
            &mut validator,
            &engine,
        )?)
    })();

    let outcome = result.unwrap_or_else(|e| {
        let mut failed = RepairOutcome::empty(&bug.id);
        failed.abort = Some(convrepair_core::RepairAbort {
            kind: AbortKind::Validation,
            message: format!("{e:#}"),
        });
        failed
    });
    let error = outcome.abort.as_ref().map(|a| a.message.clone());
    if let Some(ws) = workspace {
        if keep || error.is_some() {
            let path = ws.keep();
            info!(bug = %bug.id, workspace = %path.display(), "kept workspace");
        }
    }
    if let Some(e) = &error {
        warn!(bug = %bug.id, "run failed: {e}");
    }

    RunRecord {
        bug_id: bug.id.clone(),
        config,
        plausible: outcome.plausible.iter().map(|p| p.text.clone()).collect(),
        tries: outcome.ledger.tries_used,
        prompt_tokens: outcome.ledger.total_prompt_tokens,
        completion_tokens: outcome.ledger.total_completion_tokens,
        dollars: outcome.ledger.dollars,
        wall_s: clock.elapsed().as_secs_f64(),
        events: outcome.events,
        started_at,
        finished_at: now(),
        timed_out: outcome.timed_out,
        error,
    }
}
