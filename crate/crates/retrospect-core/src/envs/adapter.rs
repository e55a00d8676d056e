//! Generic benchmark adapter: tasks whose judging shells out to an external
//! checker command, the hook for attaching real benchmark evaluators.
//!
//! The checker receives the final output on stdin and the task id in the
//! `RETROSPECT_TASK_ID` environment variable; exit 0 means pass, exit 1
//! means fail, anything else is a stage error.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskInstance;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EvalSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

/// One externally-judged task row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExternalTask {
    pub task_id: String,
    pub instruction: String,
    pub query: String,
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub reference: Option<String>,
    pub eval: EvalSpec,
}

impl ExternalTask {
    pub fn instance(&self) -> TaskInstance {
        TaskInstance {
            task_id: self.task_id.clone(),
            instruction: self.instruction.clone(),
            query: self.query.clone(),
            background: self.background.clone(),
            reference: self.reference.clone(),
        }
    }

    /// Run the checker over a final output.
    pub fn judge(&self, final_output: &str) -> Result<bool> {
        let mut child = Command::new(&self.eval.command)
            .args(&self.eval.args)
            .env("RETROSPECT_TASK_ID", &self.task_id)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| {
                Error::stage(
                    "evaluate",
                    format!("checker {:?} failed to start: {e}", self.eval.command),
                )
            })?;
        // A checker may exit without reading stdin; EPIPE is not an error.
        let write = child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(final_output.as_bytes());
        if let Err(e) = write {
            if e.kind() != std::io::ErrorKind::BrokenPipe {
                return Err(Error::stage(
                    "evaluate",
                    format!("checker stdin write failed: {e}"),
                ));
            }
        }
        let status = child
            .wait()
            .map_err(|e| Error::stage("evaluate", format!("checker wait failed: {e}")))?;
        match status.code() {
            Some(0) => Ok(true),
            Some(1) => Ok(false),
            other => Err(Error::stage(
                "evaluate",
                format!(
                    "checker {:?} exited with {other:?} (expected 0 or 1)",
                    self.eval.command
                ),
            )),
        }
    }
}

/// Load external tasks from a JSONL file.
pub fn load_external_tasks(path: &Path) -> Result<Vec<ExternalTask>> {
    let tasks: Vec<ExternalTask> = crate::canonical::read_jsonl(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for task in &tasks {
        if !seen.insert(task.task_id.clone()) {
            return Err(Error::Config(format!(
                "duplicate task_id {:?} in {}",
                task.task_id,
                path.display()
            )));
        }
        task.instance().validate()?;
    }
    Ok(tasks)
}
