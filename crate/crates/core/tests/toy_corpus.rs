#![cfg(feature = "process")]

mod common;

use common::{toy_corpus, toy_original};
use convrepair_core::exec::{copy_tree, WorkspaceValidator};
use convrepair_core::{Patch, PatchOrigin, ValidationResult, Validator};

fn workspace_for(bug: &convrepair_core::BugInstance) -> (tempfile::TempDir, WorkspaceValidator) {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&bug.project_root, dir.path()).unwrap();
    let v = WorkspaceValidator::new(bug, dir.path()).unwrap();
    (dir, v)
}

#[test]
fn original_runs_reproduce_recorded_failures() {
    for bug in toy_corpus() {
        let (_dir, mut v) = workspace_for(&bug);
        let ValidationResult::TestFailure { info, all_failing } = v.original_run().unwrap() else {
            panic!("{} should fail", bug.id);
        };
        let recorded = toy_original(&bug);
        assert_eq!(info, recorded, "{}", bug.id);
        let mut expected = bug.failing_tests.clone();
        expected.sort();
        assert_eq!(all_failing, expected, "{}", bug.id);
    }
}

#[test]
fn reference_patches_pass() {
    for bug in toy_corpus() {
        let (_dir, mut v) = workspace_for(&bug);
        let patch = Patch::new(
            bug.reference_patch.clone().unwrap(),
            bug.scenario,
            PatchOrigin::ConversationalRepair,
            1,
        )
        .unwrap();
        assert_eq!(
            v.validate(&patch).unwrap(),
            ValidationResult::Pass,
            "{}",
            bug.id
        );
    }
}

#[test]
fn broken_patch_reports_compiler_diagnostics() {
    let bug = toy_corpus().remove(0);
    let (_dir, mut v) = workspace_for(&bug);
    let patch = Patch::new(
        "        return hihg;",
        bug.scenario,
        PatchOrigin::ConversationalRepair,
        1,
    )
    .unwrap();
    let ValidationResult::CompileError { message } = v.validate(&patch).unwrap() else {
        panic!("expected a compile error");
    };
    assert!(message.contains("hihg"), "{message}");
}

#[test]
fn corpus_sources_are_untouched_by_validation() {
    let bug = toy_corpus().remove(0);
    let before = std::fs::read(bug.original_source_path()).unwrap();
    let (_dir, mut v) = workspace_for(&bug);
    let patch = Patch::new(
        "        return high;",
        bug.scenario,
        PatchOrigin::ConversationalRepair,
        1,
    )
    .unwrap();
    v.validate(&patch).unwrap();
    assert_eq!(std::fs::read(bug.original_source_path()).unwrap(), before);
}
