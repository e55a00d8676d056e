//! Run configuration: one JSON document, every field overridable by a CLI
//! flag of the same name (flags win; the CLI layer applies them).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::PromptRole;

/// Which prompts carry the reference plan. `single_only` mirrors the
/// best-performing ablation variant (reference in the single-trajectory
/// reflection prompt only).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    None,
    #[default]
    SingleOnly,
    SingleAndIntra,
}

impl ReferencePolicy {
    /// Reference plan in the single-trajectory reflection prompt?
    pub fn reference_in_single(self) -> bool {
        !matches!(self, ReferencePolicy::None)
    }

    /// Reference plan in the per-step classification prompt?
    pub fn reference_in_intra(self) -> bool {
        matches!(self, ReferencePolicy::SingleAndIntra)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReferencePolicy::None),
            "single_only" => Ok(ReferencePolicy::SingleOnly),
            "single_and_intra" => Ok(ReferencePolicy::SingleAndIntra),
            other => Err(Error::Config(format!(
                "invalid reference_policy {other:?}: expected none, single_only, or single_and_intra"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReferencePolicy::None => "none",
            ReferencePolicy::SingleOnly => "single_only",
            ReferencePolicy::SingleAndIntra => "single_and_intra",
        }
    }
}

/// How the error-reduction rate counts errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionFormula {
    /// Total label count across paths (the declared default).
    #[default]
    LabelCount,
    /// Distinct error types per path, summed (variant, no fidelity claim).
    PerType,
}

impl ReductionFormula {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "label_count" | "label-count" => Ok(ReductionFormula::LabelCount),
            "per_type" | "per-type" => Ok(ReductionFormula::PerType),
            other => Err(Error::Config(format!(
                "invalid reduction formula {other:?}: expected label-count or per-type"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReductionFormula::LabelCount => "label_count",
            ReductionFormula::PerType => "per_type",
        }
    }
}

/// Exactly one completion backend per run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Scripted mock: rule file path.
    Mock { script: PathBuf },
    /// Chat-completion-compatible HTTP endpoint; credential read from the
    /// `LLM_API_KEY` environment variable.
    Http { endpoint: String, model: String },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            script: PathBuf::from("fixtures/mock/synthesize.json"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    /// Maximum retry trials per task (Algorithm-1 K).
    pub k: u32,
    /// Maximum steps per trial / turns per interactive episode (H).
    pub max_steps: u32,
    pub reference_policy: ReferencePolicy,
    /// Run all K trials even after a pass.
    pub exhaust_trials: bool,
    /// Classify each task right after its taxonomy extension instead of
    /// after all extensions (literal interleaved order).
    pub interleaved: bool,
    /// Accumulate mid-course reflections instead of replacing.
    pub accumulate: bool,
    pub task_parallelism: usize,
    pub in_flight_cap: usize,
    pub run_dir: PathBuf,
    /// Task fixture file or directory.
    pub tasks: PathBuf,
    /// Per-role temperature overrides, keyed by role name.
    pub temperatures: BTreeMap<String, f64>,
    pub split_ratio: f64,
    pub seed: u64,
    pub reduction: ReductionFormula,
    /// Transport retries for the HTTP backend.
    pub retries: u32,
    /// Base backoff delay, doubled per retry.
    pub backoff_ms: u64,
    /// Rendered-prompt size limit in characters; None = unlimited.
    pub prompt_char_limit: Option<usize>,
    pub max_output_tokens: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendConfig::default(),
            k: 4,
            max_steps: 8,
            reference_policy: ReferencePolicy::default(),
            exhaust_trials: false,
            interleaved: false,
            accumulate: false,
            task_parallelism: 2,
            in_flight_cap: 4,
            run_dir: PathBuf::from("runs/toy"),
            tasks: PathBuf::from("fixtures/miniplan"),
            temperatures: BTreeMap::new(),
            split_ratio: 0.8,
            seed: 7,
            reduction: ReductionFormula::default(),
            retries: 3,
            backoff_ms: 250,
            prompt_char_limit: None,
            max_output_tokens: 1024,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if self.task_parallelism < 1 {
            return Err(Error::Config("task_parallelism must be >= 1".into()));
        }
        if self.in_flight_cap < 1 {
            return Err(Error::Config("in_flight_cap must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::Config(format!(
                "split_ratio {} outside [0, 1]",
                self.split_ratio
            )));
        }
        if self.max_output_tokens < 1 {
            return Err(Error::Config("max_output_tokens must be >= 1".into()));
        }
        if self.prompt_char_limit == Some(0) {
            return Err(Error::Config(
                "prompt_char_limit must be >= 1 when set".into(),
            ));
        }
        for (name, temp) in &self.temperatures {
            PromptRole::parse(name)
                .map_err(|_| Error::Config(format!("unknown role {name:?} in temperatures")))?;
            if !temp.is_finite() || *temp < 0.0 {
                return Err(Error::Config(format!(
                    "temperature for {name} must be >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Effective temperature for a role: override, else the role default
    /// (0 for structured-output roles, 0.7 for generative ones).
    pub fn temperature(&self, role: PromptRole) -> f64 {
        if let Some(t) = self.temperatures.get(role.as_str()) {
            return *t;
        }
        if role.structured_output() {
            0.0
        } else {
            0.7
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn reference_policy_parses_the_three_names() {
        assert_eq!(
            ReferencePolicy::parse("none").unwrap(),
            ReferencePolicy::None
        );
        assert_eq!(
            ReferencePolicy::parse("single_only").unwrap(),
            ReferencePolicy::SingleOnly
        );
        assert_eq!(
            ReferencePolicy::parse("single_and_intra").unwrap(),
            ReferencePolicy::SingleAndIntra
        );
        let err = ReferencePolicy::parse("both").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn structured_roles_default_to_temperature_zero() {
        let config = RunConfig::default();
        assert_eq!(config.temperature(PromptRole::TaxonomyExtend), 0.0);
        assert_eq!(config.temperature(PromptRole::ErrorClassify), 0.0);
        assert_eq!(config.temperature(PromptRole::ForesightDiff), 0.0);
        assert_eq!(config.temperature(PromptRole::ActorReact), 0.7);
        assert_eq!(config.temperature(PromptRole::ReflectSingle), 0.7);
    }

    #[test]
    fn temperature_overrides_win() {
        let mut config = RunConfig::default();
        config.temperatures.insert("actor_react".into(), 0.2);
        assert_eq!(config.temperature(PromptRole::ActorReact), 0.2);
        config.validate().unwrap();
    }

    #[test]
    fn bad_role_in_temperatures_is_a_config_error() {
        let mut config = RunConfig::default();
        config.temperatures.insert("acter_react".into(), 0.2);
        assert_eq!(config.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_config_field_is_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"kay": 4}"#).unwrap_err();
        assert!(err.to_string().contains("kay"), "{err}");
    }

    #[test]
    fn split_ratio_bounds_enforced() {
        let config = RunConfig {
            split_ratio: 1.2,
            ..RunConfig::default()
        };
        assert_eq!(config.validate().unwrap_err().exit_code(), 2);
    }
}
