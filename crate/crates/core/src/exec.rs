//! Build and test execution inside a workspace copy of the project.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::debug;

use crate::bug::{apply_patch_to, BugError, BugInstance, Patch};
use crate::failure::{
    describe_failure, parse_failures, primary_failure, truncate_diagnostics, DirLookup, InfraError,
    TestFailureInfo, ValidationResult, Validator,
};

const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to spawn `{cmd}`: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error("command not found while running `{cmd}`: {output}")]
    CommandNotFound { cmd: String, output: String },
    #[error("waiting on `{cmd}`: {source}")]
    Wait {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Bug(#[from] BugError),
}

#[derive(Debug)]
pub struct CommandOutput {
    pub status: Option<ExitStatus>,
    /// stdout followed by stderr.
    pub output: String,
    pub timed_out: bool,
}

impl CommandOutput {
    pub fn success(&self) -> bool {
        self.status.map(|s| s.success()).unwrap_or(false)
    }
}

/// Runs `cmd` through `sh -c` in `cwd`, killing its whole process group at `deadline`.
pub fn run_shell(cmd: &str, cwd: &Path, deadline: Instant) -> Result<CommandOutput, ExecError> {
    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command.spawn().map_err(|source| ExecError::Spawn {
        cmd: cmd.to_string(),
        source,
    })?;

    let stdout = child.stdout.take().map(drain);
    let stderr = child.stderr.take().map(drain);

    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                timed_out = true;
                kill_group(&mut child);
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(POLL_INTERVAL),
            Err(source) => {
                kill_group(&mut child);
                return Err(ExecError::Wait {
                    cmd: cmd.to_string(),
                    source,
                });
            }
        }
    };

    let mut output = stdout.map(join_text).unwrap_or_default();
    output.push_str(&stderr.map(join_text).unwrap_or_default());

    if status.and_then(|s| s.code()) == Some(127) {
        return Err(ExecError::CommandNotFound {
            cmd: cmd.to_string(),
            output: output.trim().to_string(),
        });
    }
    Ok(CommandOutput {
        status,
        output,
        timed_out,
    })
}

fn drain<R: Read + Send + 'static>(mut reader: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = reader.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn join_text(handle: thread::JoinHandle<String>) -> String {
    handle.join().unwrap_or_default()
}

fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    {
        // SAFETY: killpg only sends a signal; the group id is our own child's pid.
        unsafe {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Copies the project tree at `src` into `dest`, creating `dest` if needed. A `dest`
/// nested inside `src` is skipped.
pub fn copy_tree(src: &Path, dest: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dest)?;
    let dest_canon = fs::canonicalize(dest)?;
    let walker = walkdir::WalkDir::new(src)
        .follow_links(true)
        .into_iter()
        .filter_entry(|e| fs::canonicalize(e.path()).map_or(true, |p| p != dest_canon));
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .map_err(std::io::Error::other)?;
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Builds and tests the workspace as it currently is.
///
/// `include_test_body` controls whether the failing test's full body is attached to the
/// parsed failure.
pub fn validate_workspace(
    bug: &BugInstance,
    workspace: &Path,
    include_test_body: bool,
) -> Result<ValidationResult, ExecError> {
    let deadline = Instant::now() + Duration::from_secs(bug.timeout_s);

    let build = run_shell(&bug.build_cmd, workspace, deadline)?;
    if build.timed_out {
        return Ok(ValidationResult::Timeout);
    }
    if !build.success() {
        return Ok(ValidationResult::CompileError {
            message: truncate_diagnostics(&build.output),
        });
    }

    let test = run_shell(&bug.test_cmd, workspace, deadline)?;
    if test.timed_out {
        return Ok(ValidationResult::Timeout);
    }
    if test.success() {
        return Ok(ValidationResult::Pass);
    }
    let failures = parse_failures(&test.output);
    let lookup = DirLookup::new(workspace);
    Ok(match primary_failure(&failures) {
        Some((primary, all_failing)) => ValidationResult::TestFailure {
            info: describe_failure(primary, &lookup, include_test_body),
            all_failing,
        },
        None => {
            // Nonzero exit without a parseable failure is still a failure.
            let code = test
                .status
                .and_then(|s| s.code())
                .map(|c| c.to_string())
                .unwrap_or_else(|| "signal".into());
            let tail = truncate_diagnostics(&test.output);
            let name = "(test command)".to_string();
            ValidationResult::TestFailure {
                info: TestFailureInfo::new(
                    name.clone(),
                    format!("TestCommandFailed: exit status {code}\n{tail}")
                        .trim_end()
                        .to_string(),
                ),
                all_failing: vec![name],
            }
        }
    })
}

/// Validates a patch that has already been applied to `workspace`.
pub fn validate(
    bug: &BugInstance,
    patch: &Patch,
    workspace: &Path,
) -> Result<ValidationResult, ExecError> {
    debug!(bug = %bug.id, try_index = patch.try_index, "validating");
    validate_workspace(bug, workspace, false)
}

/// Applies each candidate to a dedicated workspace copy and validates it.
pub struct WorkspaceValidator {
    bug: BugInstance,
    original: String,
    workspace: PathBuf,
    include_test_body: bool,
}

impl WorkspaceValidator {
    pub fn new(bug: &BugInstance, workspace: impl Into<PathBuf>) -> Result<Self, ExecError> {
        Ok(WorkspaceValidator {
            original: bug.read_source()?,
            bug: bug.clone(),
            workspace: workspace.into(),
            include_test_body: false,
        })
    }

    pub fn include_test_body(mut self, yes: bool) -> Self {
        self.include_test_body = yes;
        self
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    /// Runs the unpatched original to capture the bug-exposing failure.
    pub fn original_run(&mut self) -> Result<ValidationResult, ExecError> {
        let identity = Patch {
            text: crate::bug::split_source(&self.original, self.bug.bug_span, self.bug.bug_span)?
                .buggy,
            scenario: self.bug.scenario,
            origin: crate::bug::PatchOrigin::ConversationalRepair,
            try_index: 0,
        };
        apply_patch_to(&self.original, &self.bug, &identity, &self.workspace)?;
        validate_workspace(&self.bug, &self.workspace, self.include_test_body)
    }
}

impl Validator for WorkspaceValidator {
    fn validate(&mut self, patch: &Patch) -> Result<ValidationResult, InfraError> {
        apply_patch_to(&self.original, &self.bug, patch, &self.workspace)?;
        Ok(validate_workspace(
            &self.bug,
            &self.workspace,
            self.include_test_body,
        )?)
    }
}
