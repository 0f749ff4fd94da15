//! Grid runs over engine configurations with one summary row per configuration.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{
    conversational_repair, AbortKind, EngineConfig, EngineError, RepairAbort, RepairOutcome,
    RepairTask,
};
use crate::failure::{InfraError, Validator};
use crate::llm::ChatBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config_id: String,
    pub prompt_variant: String,
    pub feedback_variant: String,
    pub max_conv_length: usize,
    pub shots: usize,
    pub bugs_plausible: usize,
    pub mean_tries: f64,
    pub mean_dollars: f64,
    /// Per-bug failures (`bug_id: message`); not part of the CSV.
    #[serde(skip)]
    pub annotations: Vec<String>,
}

impl AblationRow {
    pub fn summarize(config: &EngineConfig, outcomes: &[RepairOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        AblationRow {
            config_id: config.label.clone(),
            prompt_variant: format!(
                "{}/{}",
                config.prompt_variant.level, config.prompt_variant.system_msg
            ),
            feedback_variant: config.feedback_variant.level.to_string(),
            max_conv_length: config.max_conv_length,
            shots: config.prompt_variant.shots,
            bugs_plausible: outcomes.iter().filter(|o| !o.plausible.is_empty()).count(),
            mean_tries: outcomes
                .iter()
                .map(|o| o.ledger.tries_used as f64)
                .fold(0.0, |a, b| a + b)
                / n,
            mean_dollars: outcomes
                .iter()
                .map(|o| o.ledger.dollars)
                .fold(0.0, |a, b| a + b)
                / n,
            annotations: outcomes
                .iter()
                .filter_map(|o| {
                    o.abort
                        .as_ref()
                        .map(|a| format!("{}: {}", o.bug_id, a.message))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub config: EngineConfig,
    pub outcomes: Vec<RepairOutcome>,
    pub row: AblationRow,
}

/// Repairs every task under every configuration. `validator_for` supplies a fresh
/// validator per (task, configuration). Per-bug failures end up in the row's
/// annotations; only an invalid configuration is an error.
pub fn run_ablation<F>(
    tasks: &[RepairTask],
    backend: &dyn ChatBackend,
    grid: &[EngineConfig],
    mut validator_for: F,
) -> Result<Vec<AblationRun>, EngineError>
where
    F: FnMut(&RepairTask) -> Result<Box<dyn Validator>, InfraError>,
{
    let mut runs = Vec::with_capacity(grid.len());
    for config in grid {
        config.check()?;
        let mut outcomes = Vec::with_capacity(tasks.len());
        for task in tasks {
            let outcome = validator_for(task)
                .map_err(|e| e.to_string())
                .and_then(|mut v| {
                    conversational_repair(task, backend, v.as_mut(), config)
                        .map_err(|e| e.to_string())
                });
            outcomes.push(outcome.unwrap_or_else(|message| {
                let mut failed = RepairOutcome::empty(&task.bug.id);
                failed.abort = Some(RepairAbort {
                    kind: AbortKind::Validation,
                    message,
                });
                failed
            }));
        }
        let row = AblationRow::summarize(config, &outcomes);
        runs.push(AblationRun {
            config: config.clone(),
            outcomes,
            row,
        });
    }
    Ok(runs)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_row() {
        let config = EngineConfig::default();
        let row = AblationRow::summarize(&config, &[]);
        let mut buf = Vec::new();
        write_ablation_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "config_id,prompt_variant,feedback_variant,max_conv_length,shots,bugs_plausible,mean_tries,mean_dollars"
        );
        assert_eq!(
            lines.next().unwrap(),
            "default,name-err-fail-line/apr-tool,dynamic,3,1,0,0.0,0.0"
        );
    }
}
