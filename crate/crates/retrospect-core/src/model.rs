//! Domain types shared across every pipeline stage.
//!
//! All values are immutable after construction; constructors enforce the
//! invariants so downstream stages never re-check them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training instance: an instruction, a task query, background
/// information, and an optional reference output (a valid but not
/// necessarily unique solution).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaskInstance {
    pub task_id: String,
    pub instruction: String,
    pub query: String,
    pub background: String,
    #[serde(default)]
    pub reference: Option<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(Error::invalid("task", "task_id is empty"));
        }
        if self.query.trim().is_empty() {
            return Err(Error::invalid(
                "task",
                format!("query of task {} is empty", self.task_id),
            ));
        }
        Ok(())
    }
}

/// One thought/action/observation step of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Step {
    pub index: usize,
    #[serde(default)]
    pub thought: Option<String>,
    pub action: String,
    pub observation: String,
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Aborted,
}

impl Outcome {
    pub fn is_pass(self) -> bool {
        matches!(self, Outcome::Pass)
    }
    pub fn is_fail(self) -> bool {
        matches!(self, Outcome::Fail)
    }
}

/// Per-turn record of the foresight mechanism in interactive episodes.
///
/// The predicted response is captured before the true response is observed;
/// `run_interactive` enforces that call order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ForesightTurn {
    pub index: usize,
    pub action: String,
    pub predicted_response: String,
    pub true_response: String,
    pub deviated: bool,
    pub reflection_triggered: bool,
}

/// The full step sequence of one trial of one task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Trajectory {
    pub task_id: String,
    /// 1-based trial number within the task.
    pub trial_index: u32,
    pub steps: Vec<Step>,
    pub final_output: String,
    pub outcome: Outcome,
    /// Present only for interactive episodes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foresight: Vec<ForesightTurn>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.trial_index == 0 {
            return Err(Error::invalid("trajectory", "trial_index must be >= 1"));
        }
        if self.steps.is_empty() && self.outcome != Outcome::Aborted {
            return Err(Error::invalid(
                "trajectory",
                format!(
                    "({}, {}) has no steps but outcome is not aborted",
                    self.task_id, self.trial_index
                ),
            ));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i {
                return Err(Error::invalid(
                    "trajectory",
                    format!(
                        "({}, {}) step indices not contiguous: expected {i}, found {}",
                        self.task_id, self.trial_index, step.index
                    ),
                ));
            }
            if step.action.trim().is_empty() {
                return Err(Error::invalid(
                    "trajectory",
                    format!(
                        "({}, {}) step {i} has empty action",
                        self.task_id, self.trial_index
                    ),
                ));
            }
        }
        for turn in &self.foresight {
            if turn.reflection_triggered && !turn.deviated {
                return Err(Error::invalid(
                    "trajectory",
                    format!(
                        "({}, {}) foresight turn {} triggered a reflection without a deviation",
                        self.task_id, self.trial_index, turn.index
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Native `Thought/Action/Observation` transcript of the steps.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            if let Some(thought) = &step.thought {
                out.push_str("Thought: ");
                out.push_str(thought);
                out.push('\n');
            }
            out.push_str("Action: ");
            out.push_str(&step.action);
            out.push('\n');
            out.push_str("Observation: ");
            out.push_str(&step.observation);
            out.push('\n');
        }
        out
    }
}

/// Granularity of a reflection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionLevel {
    Micro,
    ErrorType,
    Final,
}

/// What a reflection was generated from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionSource {
    Trial { task_id: String, trial_index: u32 },
    ErrorType { name: String },
}

/// Inputs that went into a final (merged) reflection, recorded by key so the
/// assembly is auditable without replaying the run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MergeManifest {
    /// "task_id#trial_index" of the merged micro reflection, when present.
    pub micro: Option<String>,
    /// task_id whose taxonomy rationale was merged, when present.
    pub rationale_task: Option<String>,
    /// Canonical names of the merged error-type reflections, ascending.
    pub error_types: Vec<String>,
}

/// Level-tagged reflection text bound to its source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Reflection {
    pub level: ReflectionLevel,
    pub text: String,
    pub source: ReflectionSource,
    /// Present only on final reflections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<MergeManifest>,
}

impl Reflection {
    pub fn new(level: ReflectionLevel, text: String, source: ReflectionSource) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::invalid("reflection", "text is empty"));
        }
        let source_is_type = matches!(source, ReflectionSource::ErrorType { .. });
        if (level == ReflectionLevel::ErrorType) != source_is_type {
            return Err(Error::invalid(
                "reflection",
                "level error_type must pair with an error-type source, and only then",
            ));
        }
        Ok(Reflection {
            level,
            text,
            source,
            manifest: None,
        })
    }

    pub fn with_manifest(mut self, manifest: MergeManifest) -> Result<Self> {
        if self.level != ReflectionLevel::Final {
            return Err(Error::invalid(
                "reflection",
                "only final reflections carry a merge manifest",
            ));
        }
        self.manifest = Some(manifest);
        Ok(self)
    }
}

/// A named error type in the taxonomy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorType {
    /// Lowercase, single-spaced, trimmed form; unique within a taxonomy.
    pub canonical_name: String,
    /// The name as first produced by the model.
    pub display_name: String,
}

/// Growing, deduplicated set of error types plus per-task rationales.
///
/// Types are only ever appended; insertion order is preserved.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorTaxonomy {
    pub types: Vec<ErrorType>,
    pub rationales: Vec<TaxonomyRationale>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaxonomyRationale {
    pub task_id: String,
    pub rationale: String,
}

impl ErrorTaxonomy {
    pub fn contains(&self, canonical_name: &str) -> bool {
        self.types
            .iter()
            .any(|t| t.canonical_name == canonical_name)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Append `display_name` unless its normalized form is already present.
    /// Returns true when a new type was added.
    pub fn push_type(&mut self, display_name: &str) -> Result<bool> {
        let canonical = normalize_error_name(display_name)?;
        if self.contains(&canonical) {
            return Ok(false);
        }
        self.types.push(ErrorType {
            canonical_name: canonical,
            display_name: display_name.trim().to_string(),
        });
        Ok(true)
    }

    pub fn record_rationale(&mut self, task_id: &str, rationale: &str) {
        self.rationales.push(TaxonomyRationale {
            task_id: task_id.to_string(),
            rationale: rationale.to_string(),
        });
    }

    pub fn display_name(&self, canonical_name: &str) -> Option<&str> {
        self.types
            .iter()
            .find(|t| t.canonical_name == canonical_name)
            .map(|t| t.display_name.as_str())
    }
}

/// An error label on one action step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorLabel {
    pub step_index: usize,
    /// Canonical taxonomy name.
    pub error_type: String,
    pub critique: String,
}

/// Per-step error labels for one trajectory, with the classification rationale.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorPath {
    pub task_id: String,
    pub trial_index: u32,
    /// May be empty (successful trial).
    pub labels: Vec<ErrorLabel>,
    pub rationale: String,
}

impl ErrorPath {
    pub fn validate(&self, taxonomy: &ErrorTaxonomy, max_step: usize) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for label in &self.labels {
            if !taxonomy.contains(&label.error_type) {
                return Err(Error::invalid(
                    "error path",
                    format!(
                        "({}, {}) references unknown error type {:?}",
                        self.task_id, self.trial_index, label.error_type
                    ),
                ));
            }
            if label.step_index >= max_step {
                return Err(Error::invalid(
                    "error path",
                    format!(
                        "({}, {}) label step {} exceeds trajectory length {max_step}",
                        self.task_id, self.trial_index, label.step_index
                    ),
                ));
            }
            if !seen.insert((label.step_index, label.error_type.clone())) {
                return Err(Error::invalid(
                    "error path",
                    format!(
                        "({}, {}) has two labels for step {} and type {:?}",
                        self.task_id, self.trial_index, label.step_index, label.error_type
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Distinct canonical error types in this path, sorted.
    pub fn error_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self
            .labels
            .iter()
            .map(|l| l.error_type.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        types.sort();
        types
    }
}

/// Canonical form of an error-type name: lowercase, internal whitespace
/// collapsed to single spaces, trimmed, terminal punctuation removed.
///
/// Idempotent; exact duplicates after normalization are the engine's merge
/// criterion (semantic merging stays with the model).
pub fn normalize_error_name(raw: &str) -> Result<String> {
    if raw.trim().is_empty() {
        return Err(Error::invalid("error type name", "empty after trimming"));
    }
    let collapsed: String = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    // Trailing punctuation and whitespace can interleave ("done? !"), so
    // strip the whole mixed run to keep normalization idempotent.
    let stripped = collapsed.trim_end_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | '!' | '?' | ',' | ';' | ':')
    });
    if stripped.is_empty() {
        return Err(Error::invalid(
            "error type name",
            format!("{raw:?} is empty after normalization"),
        ));
    }
    Ok(stripped.to_string())
}
