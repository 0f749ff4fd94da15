//! `ablate`: run a grid of engine settings over the corpus and tabulate the results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use convrepair_core::{
    load_corpus, run_ablation, write_ablation_csv, AblationRow, EngineConfig, RepairScenario,
    Validator,
};
use serde::Deserialize;
use tracing::warn;

use crate::repair::select_bugs;
use crate::settings::Knobs;
use crate::workspace::{OwnedValidator, Workspace};

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub knobs: Knobs,
    /// JSON array of grid entries, e.g. `[{"id": "len1", "max_conv_len": 1}]`.
    #[arg(long)]
    pub grid: PathBuf,
    /// Where to write the CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long = "bug")]
    pub bugs: Vec<String>,
    #[arg(long)]
    pub scenario: Option<String>,
}

/// One grid row: an id plus engine settings that override the shared ones.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub id: String,
    pub max_tries: Option<usize>,
    pub max_conv_len: Option<usize>,
    pub shots: Option<usize>,
    pub prompt_variant: Option<String>,
    pub feedback_variant: Option<String>,
    pub system_message: Option<String>,
    pub timeout_s: Option<u64>,
}

impl GridEntry {
    fn knobs(&self) -> Knobs {
        Knobs {
            max_tries: self.max_tries,
            max_conv_len: self.max_conv_len,
            shots: self.shots,
            prompt_variant: self.prompt_variant.clone(),
            feedback_variant: self.feedback_variant.clone(),
            system_message: self.system_message.clone(),
            timeout_s: self.timeout_s,
            ..Knobs::default()
        }
    }
}

pub fn load_grid(path: &Path) -> Result<Vec<GridEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading grid {}", path.display()))?;
    let grid: Vec<GridEntry> = serde_json::from_str(&text)
        .with_context(|| format!("malformed grid file {}", path.display()))?;
    if grid.is_empty() {
        bail!("grid file {} has no entries", path.display());
    }
    let mut seen = std::collections::HashSet::new();
    for entry in &grid {
        if !seen.insert(entry.id.as_str()) {
            bail!("grid file {}: duplicate id `{}`", path.display(), entry.id);
        }
    }
    Ok(grid)
}

/// Engine configs for the grid. One budget applies to a whole row, so an unset
/// `max_tries` falls back to the single-line/single-hunk default.
pub fn grid_configs(grid: &[GridEntry], base: &Knobs) -> Result<Vec<EngineConfig>> {
    grid.iter()
        .map(|entry| {
            let knobs = entry.knobs().over(base.clone());
            let config = knobs
                .engine_config(RepairScenario::SingleLine)
                .with_context(|| format!("grid entry `{}`", entry.id))?;
            Ok(EngineConfig {
                label: entry.id.clone(),
                ..config
            })
        })
        .collect()
}

pub fn run(args: AblateArgs, config_file: Option<&Path>) -> Result<bool> {
    let knobs = args.knobs.with_config(config_file)?;
    let grid = load_grid(&args.grid)?;
    let configs = grid_configs(&grid, &knobs)?;
    let corpus = load_corpus(knobs.corpus()?)?;
    let bugs = select_bugs(corpus, &args.bugs, args.scenario.as_deref())?;
    let backend = knobs.backend_config()?.build()?;
    let root = knobs.workspace_root.as_deref();

    let mut tasks = Vec::with_capacity(bugs.len());
    for bug in &bugs {
        let workspace = Workspace::create(bug, root)?;
        tasks.push(workspace.task(bug)?);
    }

    let runs = run_ablation(&tasks, backend.as_ref(), &configs, |task| {
        OwnedValidator::new(&task.bug, root)
            .map(|v| Box::new(v) as Box<dyn Validator>)
            .map_err(|e| format!("{e:#}").into())
    })?;
    let rows: Vec<AblationRow> = runs.into_iter().map(|r| r.row).collect();

    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot open {} for writing", path.display()))?;
        write_ablation_csv(&rows, file)?;
    }
    print!("{}", table(&rows));
    let mut clean = true;
    for row in &rows {
        for note in &row.annotations {
            warn!(config = %row.config_id, "{note}");
            clean = false;
        }
    }
    Ok(clean)
}

pub fn table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<28} {:<20} {:>4} {:>5} {:>9} {:>10} {:>11}",
        "config", "prompt", "feedback", "len", "shots", "plausible", "mean_tries", "mean_dollars"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<28} {:<20} {:>4} {:>5} {:>9} {:>10.2} {:>11.6}",
            r.config_id,
            r.prompt_variant,
            r.feedback_variant,
            r.max_conv_length,
            r.shots,
            r.bugs_plausible,
            r.mean_tries,
            r.mean_dollars
        );
    }
    out
}
