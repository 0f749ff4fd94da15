//! JSONL run records.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use convrepair_core::{BackendConfig, BackendKind, EngineConfig, RepairEvent};
use serde::{Deserialize, Serialize};

/// Backend settings worth keeping with a result. Never includes the API key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSnapshot {
    pub kind: BackendKind,
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl From<&BackendConfig> for BackendSnapshot {
    fn from(c: &BackendConfig) -> Self {
        BackendSnapshot {
            kind: c.kind,
            model: c.model_name.clone(),
            temperature: c.temperature,
            seed: c.seed,
            script: c.script_path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub engine: EngineConfig,
    pub backend: BackendSnapshot,
}

/// One bug's run, one line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub bug_id: String,
    pub config: Option<ConfigSnapshot>,
    pub plausible: Vec<String>,
    pub tries: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: f64,
    pub wall_s: f64,
    pub events: Vec<RepairEvent>,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default)]
    pub timed_out: bool,
    /// Set when the run could not complete (infrastructure, backend or context failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Appends records to a file, one flushed line each.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {} for writing", path.display()))?;
        Ok(JsonlWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
