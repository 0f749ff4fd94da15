//! `report`: summarize one or more results files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use tracing::warn;

use crate::record::RunRecord;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Results files (JSONL).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Also print every plausible patch with its bug id.
    #[arg(long)]
    pub patches: bool,
    /// Fail on corrupt lines instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize)]
pub struct BugSummary {
    pub runs: usize,
    pub plausible: usize,
    pub tries: usize,
    pub dollars: f64,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub records: usize,
    pub bugs_with_plausible: usize,
    pub plausible: usize,
    pub tries: usize,
    pub mean_tries: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_dollars: f64,
    pub skipped_lines: usize,
    pub bugs: BTreeMap<String, BugSummary>,
}

/// Totals over the records; depends on nothing but their content.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut s = Summary {
        records: records.len(),
        ..Summary::default()
    };
    for r in records {
        let bug = s.bugs.entry(r.bug_id.clone()).or_default();
        bug.runs += 1;
        bug.plausible += r.plausible.len();
        bug.tries += r.tries;
        bug.dollars += r.dollars;
        s.plausible += r.plausible.len();
        s.tries += r.tries;
        s.prompt_tokens += r.prompt_tokens;
        s.completion_tokens += r.completion_tokens;
        s.total_dollars += r.dollars;
    }
    s.bugs_with_plausible = s.bugs.values().filter(|b| b.plausible > 0).count();
    if !records.is_empty() {
        s.mean_tries = s.tries as f64 / records.len() as f64;
    }
    s
}

/// Parses JSONL text, returning the records and the 1-based numbers of corrupt lines.
pub fn parse_records(text: &str) -> (Vec<RunRecord>, Vec<usize>) {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(_) => bad.push(i + 1),
        }
    }
    (records, bad)
}

pub fn run(args: ReportArgs) -> Result<bool> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for path in &args.files {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (mut recs, bad) = parse_records(&text);
        for line in &bad {
            warn!("{}:{line}: corrupt record skipped", path.display());
        }
        skipped += bad.len();
        records.append(&mut recs);
    }
    let mut summary = summarize(&records);
    summary.skipped_lines = skipped;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", render(&summary));
    }
    if args.patches {
        for r in &records {
            for (i, p) in r.plausible.iter().enumerate() {
                println!("--- {} plausible #{}\n{p}", r.bug_id, i + 1);
            }
        }
    }
    Ok(!(args.strict && skipped > 0))
}

pub fn render(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>5} {:>9} {:>7} {:>10}",
        "bug", "runs", "plausible", "tries", "dollars"
    );
    for (id, b) in &s.bugs {
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>9} {:>7} {:>10.6}",
            id, b.runs, b.plausible, b.tries, b.dollars
        );
    }
    let _ = writeln!(out, "records: {}", s.records);
    let _ = writeln!(
        out,
        "bugs with a plausible patch: {}",
        s.bugs_with_plausible
    );
    let _ = writeln!(out, "total dollars: {:.6}", s.total_dollars);
    let _ = writeln!(out, "mean tries: {:.2}", s.mean_tries);
    if s.skipped_lines > 0 {
        let _ = writeln!(out, "skipped lines: {}", s.skipped_lines);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(bug: &str, dollars: f64, tries: usize) -> RunRecord {
        RunRecord {
            bug_id: bug.into(),
            config: None,
            plausible: vec!["x".into()],
            tries,
            prompt_tokens: 0,
            completion_tokens: 0,
            dollars,
            wall_s: 0.0,
            events: vec![],
            started_at: String::new(),
            finished_at: String::new(),
            timed_out: false,
            error: None,
        }
    }

    #[test]
    fn empty_input_is_all_zero() {
        let (records, bad) = parse_records("");
        assert!(bad.is_empty());
        let s = summarize(&records);
        assert_eq!(s, Summary::default());
    }

    #[test]
    fn dollars_add_up() {
        let s = summarize(&[record("a", 0.01, 2), record("b", 0.03, 4)]);
        assert!((s.total_dollars - 0.04).abs() < 1e-12);
        assert_eq!(s.mean_tries, 3.0);
        assert_eq!(s.bugs_with_plausible, 2);
    }

    #[test]
    fn corrupt_lines_are_reported() {
        let good = serde_json::to_string(&record("a", 0.5, 1)).unwrap();
        let text = format!("{good}\n{{\"bug_id\": \n\n{good}\n");
        let (records, bad) = parse_records(&text);
        assert_eq!(records.len(), 2);
        assert_eq!(bad, [2]);
    }
}
