//! Per-run scratch copies of a bug's project.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convrepair_core::exec::{copy_tree, WorkspaceValidator};
use convrepair_core::{
    BugInstance, InfraError, MemoValidator, Patch, RepairTask, ValidationResult, Validator,
};
use tempfile::TempDir;

/// A temporary copy of the project, removed on drop unless kept.
pub struct Workspace {
    dir: TempDir,
}

impl Workspace {
    pub fn create(bug: &BugInstance, root: Option<&Path>) -> Result<Self> {
        let mut builder = tempfile::Builder::new();
        let prefix = format!("convrepair-{}-", bug.id);
        builder.prefix(&prefix);
        let dir = match root {
            Some(root) => {
                std::fs::create_dir_all(root)
                    .with_context(|| format!("creating workspace root {}", root.display()))?;
                builder.tempdir_in(root)
            }
            None => builder.tempdir(),
        }
        .context("creating workspace")?;
        copy_tree(&bug.project_root, dir.path()).with_context(|| {
            format!("copying {} into the workspace", bug.project_root.display())
        })?;
        Ok(Workspace { dir })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Leaves the directory on disk and returns its path.
    pub fn keep(self) -> PathBuf {
        self.dir.keep()
    }

    pub fn validator(
        &self,
        bug: &BugInstance,
        include_test_body: bool,
    ) -> Result<WorkspaceValidator> {
        Ok(WorkspaceValidator::new(bug, self.path())?.include_test_body(include_test_body))
    }

    /// Runs the unpatched project and builds the repair task from its failure.
    pub fn task(&self, bug: &BugInstance) -> Result<RepairTask> {
        let mut validator = self.validator(bug, true)?;
        let result = validator
            .original_run()
            .with_context(|| format!("{}: running the original tests", bug.id))?;
        let info = match result {
            ValidationResult::TestFailure { info, .. } => info,
            other => bail!(
                "{}: original run should fail a test but ended with {}",
                bug.id,
                other.tag()
            ),
        };
        Ok(RepairTask::load(bug.clone(), info)?)
    }
}

/// A caching validator that owns its workspace.
pub struct OwnedValidator {
    inner: MemoValidator<WorkspaceValidator>,
    _workspace: Workspace,
}

impl OwnedValidator {
    pub fn new(bug: &BugInstance, root: Option<&Path>) -> Result<Self> {
        let workspace = Workspace::create(bug, root)?;
        let inner = MemoValidator::new(workspace.validator(bug, false)?);
        Ok(OwnedValidator {
            inner,
            _workspace: workspace,
        })
    }
}

impl Validator for OwnedValidator {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError> {
        self.inner.validate(patch)
    }
}
