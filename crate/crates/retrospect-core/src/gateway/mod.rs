//! Uniform access to language-model completions: prompt rendering, a
//! scripted mock and an HTTP backend, retries, auditing, and an in-flight
//! cap shared by all callers.

pub mod audit;
pub mod http;
pub mod mock;
pub mod parse;
pub mod template;

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use audit::AuditLog;
use template::TemplateSet;

/// The nine prompt roles; each binds to exactly one template per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    ActorReact,
    ReflectSingle,
    TaxonomyExtend,
    ErrorClassify,
    ReflectErrorType,
    MergeSummarize,
    ForesightPredict,
    ForesightDiff,
    ReflectMidcourse,
}

impl PromptRole {
    pub const ALL: [PromptRole; 9] = [
        PromptRole::ActorReact,
        PromptRole::ReflectSingle,
        PromptRole::TaxonomyExtend,
        PromptRole::ErrorClassify,
        PromptRole::ReflectErrorType,
        PromptRole::MergeSummarize,
        PromptRole::ForesightPredict,
        PromptRole::ForesightDiff,
        PromptRole::ReflectMidcourse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::ActorReact => "actor_react",
            PromptRole::ReflectSingle => "reflect_single",
            PromptRole::TaxonomyExtend => "taxonomy_extend",
            PromptRole::ErrorClassify => "error_classify",
            PromptRole::ReflectErrorType => "reflect_error_type",
            PromptRole::MergeSummarize => "merge_summarize",
            PromptRole::ForesightPredict => "foresight_predict",
            PromptRole::ForesightDiff => "foresight_diff",
            PromptRole::ReflectMidcourse => "reflect_midcourse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PromptRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid("prompt role", format!("unknown role {s:?}")))
    }

    /// Roles whose output is parsed as JSON (default temperature 0).
    pub fn structured_output(self) -> bool {
        matches!(
            self,
            PromptRole::TaxonomyExtend | PromptRole::ErrorClassify | PromptRole::ForesightDiff
        )
    }
}

/// One completion request after rendering defaults are applied.
#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub role: PromptRole,
    pub bindings: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// What a backend returns for one attempt.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Backend-level failure; `retryable` drives the gateway's retry loop.
#[derive(Debug)]
pub struct BackendError {
    pub retryable: bool,
    pub detail: String,
}

impl BackendError {
    pub fn fatal(detail: impl Into<String>) -> Self {
        BackendError {
            retryable: false,
            detail: detail.into(),
        }
    }
    pub fn transient(detail: impl Into<String>) -> Self {
        BackendError {
            retryable: true,
            detail: detail.into(),
        }
    }
}

/// A completion backend: the scripted mock or the HTTP client.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        role: PromptRole,
        prompt: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> std::result::Result<BackendResponse, BackendError>;

    fn name(&self) -> &'static str;
}

/// Inputs for one prompt, with the structure the overflow policy needs:
/// plain bindings, plus an optional binding assembled from repeated blocks
/// (oldest first) and an optional binding that may be middle-truncated.
#[derive(Debug, Clone, Default)]
pub struct PromptInputs {
    pub bindings: BTreeMap<String, String>,
    pub repeated: Option<(String, Vec<String>)>,
    pub truncatable: Option<String>,
}

impl PromptInputs {
    pub fn plain(bindings: BTreeMap<String, String>) -> Self {
        PromptInputs {
            bindings,
            repeated: None,
            truncatable: None,
        }
    }

    pub fn bind(mut self, name: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(name.to_string(), value.into());
        self
    }

    /// Bind `name` to `blocks`, joined oldest-first; on overflow the oldest
    /// blocks are dropped first.
    pub fn repeated(mut self, name: &str, blocks: Vec<String>) -> Self {
        self.repeated = Some((name.to_string(), blocks));
        self
    }

    /// Designate the binding that may be middle-truncated on overflow.
    pub fn truncatable(mut self, name: &str) -> Self {
        self.truncatable = Some(name.to_string());
        self
    }
}

/// Marker spliced in when background text is middle-truncated on overflow.
pub const ELISION_MARKER: &str = "[... omitted ...]";

/// Separator between repeated blocks (e.g. the trials of one task).
pub const BLOCK_SEPARATOR: &str = "\n\n";

struct InFlight {
    state: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight {
            state: Mutex::new(0),
            cv: Condvar::new(),
            cap,
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut count = self.state.lock().expect("in-flight lock poisoned");
        while *count >= self.cap {
            count = self.cv.wait(count).expect("in-flight lock poisoned");
        }
        *count += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.0.state.lock().expect("in-flight lock poisoned");
        *count -= 1;
        self.0.cv.notify_one();
    }
}

/// Retry/backoff and sizing knobs, taken from [`RunConfig`].
#[derive(Debug, Clone)]
pub struct GatewayLimits {
    pub retries: u32,
    pub backoff_ms: u64,
    pub in_flight_cap: usize,
    pub prompt_char_limit: Option<usize>,
    pub max_output_tokens: u32,
}

impl Default for GatewayLimits {
    fn default() -> Self {
        GatewayLimits {
            retries: 3,
            backoff_ms: 250,
            in_flight_cap: 4,
            prompt_char_limit: None,
            max_output_tokens: 1024,
        }
    }
}

/// The shared completion gateway. Cheap to share by reference across
/// threads; the audit log is internally serialized and the in-flight cap
/// bounds concurrent backend calls.
pub struct Gateway {
    backend: Box<dyn Backend>,
    templates: TemplateSet,
    audit: AuditLog,
    limits: GatewayLimits,
    temperatures: BTreeMap<PromptRole, f64>,
    inflight: InFlight,
}

impl Gateway {
    pub fn new(
        backend: Box<dyn Backend>,
        templates: TemplateSet,
        audit: AuditLog,
        limits: GatewayLimits,
        temperatures: BTreeMap<PromptRole, f64>,
    ) -> Self {
        let inflight = InFlight::new(limits.in_flight_cap.max(1));
        Gateway {
            backend,
            templates,
            audit,
            limits,
            temperatures,
            inflight,
        }
    }

    /// Build a gateway from a run config, writing the audit log into the
    /// run directory.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        use crate::config::BackendConfig;
        let backend: Box<dyn Backend> = match &config.backend {
            BackendConfig::Mock { script } => Box::new(mock::ScriptedMock::from_file(script)?),
            BackendConfig::Http { endpoint, model } => Box::new(http::HttpBackend::from_env(
                endpoint.clone(),
                model.clone(),
            )?),
        };
        std::fs::create_dir_all(&config.run_dir).map_err(|e| Error::io(&config.run_dir, e))?;
        let audit = AuditLog::to_file(&config.run_dir.join(audit::AUDIT_FILE))?;
        let limits = GatewayLimits {
            retries: config.retries,
            backoff_ms: config.backoff_ms,
            in_flight_cap: config.in_flight_cap,
            prompt_char_limit: config.prompt_char_limit,
            max_output_tokens: config.max_output_tokens,
        };
        let temperatures = PromptRole::ALL
            .into_iter()
            .map(|role| (role, config.temperature(role)))
            .collect();
        Ok(Gateway::new(
            backend,
            TemplateSet::for_policy(config.reference_policy),
            audit,
            limits,
            temperatures,
        ))
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    fn temperature(&self, role: PromptRole) -> f64 {
        self.temperatures
            .get(&role)
            .copied()
            .unwrap_or(if role.structured_output() { 0.0 } else { 0.7 })
    }

    /// Render `role`'s template, applying the overflow policy when the
    /// result exceeds the configured prompt size: drop the oldest repeated
    /// block first, then middle-truncate the designated binding.
    pub fn render(&self, role: PromptRole, inputs: &PromptInputs) -> Result<String> {
        let mut blocks = inputs.repeated.clone();
        let mut bindings = inputs.bindings.clone();
        if let Some((name, list)) = &blocks {
            bindings.insert(name.clone(), list.join(BLOCK_SEPARATOR));
        }
        let mut prompt = self.templates.render(role, &bindings)?;
        let Some(limit) = self.limits.prompt_char_limit else {
            return Ok(prompt);
        };
        while prompt.chars().count() > limit {
            match &mut blocks {
                Some((name, list)) if list.len() > 1 => {
                    list.remove(0);
                    bindings.insert(name.clone(), list.join(BLOCK_SEPARATOR));
                    prompt = self.templates.render(role, &bindings)?;
                }
                _ => break,
            }
        }
        let over = prompt.chars().count().saturating_sub(limit);
        if over > 0 {
            if let Some(name) = &inputs.truncatable {
                if let Some(value) = bindings.get(name) {
                    let truncated = middle_truncate(value, over);
                    if truncated.chars().count() < value.chars().count() {
                        bindings.insert(name.clone(), truncated);
                        prompt = self.templates.render(role, &bindings)?;
                    }
                }
            }
        }
        if prompt.chars().count() > limit {
            log::warn!(
                "prompt for role {} still exceeds limit {limit} after overflow policy",
                role.as_str()
            );
        }
        Ok(prompt)
    }

    /// Render and complete. Non-empty completion guaranteed on success.
    pub fn complete(&self, role: PromptRole, inputs: &PromptInputs) -> Result<String> {
        let prompt = self.render(role, inputs)?;
        self.complete_prompt(role, &prompt)
    }

    /// Complete an already-rendered prompt with retries on transient
    /// failures; every attempt is audited.
    pub fn complete_prompt(&self, role: PromptRole, prompt: &str) -> Result<String> {
        let _guard = self.inflight.acquire();
        let temperature = self.temperature(role);
        let max_attempts = self.limits.retries.saturating_add(1);
        let mut last_detail = String::new();
        for attempt in 1..=max_attempts {
            match self
                .backend
                .complete(role, prompt, temperature, self.limits.max_output_tokens)
            {
                Ok(response) => {
                    self.audit.record_ok(role, attempt, prompt, &response);
                    if response.text.trim().is_empty() {
                        return Err(Error::Backend(format!(
                            "{} returned an empty completion for role {}",
                            self.backend.name(),
                            role.as_str()
                        )));
                    }
                    return Ok(response.text);
                }
                Err(err) => {
                    self.audit.record_err(role, attempt, prompt, &err.detail);
                    last_detail = err.detail;
                    if !err.retryable || attempt == max_attempts {
                        break;
                    }
                    let delay = self
                        .limits
                        .backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                }
            }
        }
        Err(Error::Backend(format!(
            "{} failed for role {} after {max_attempts} attempt(s): {last_detail}",
            self.backend.name(),
            role.as_str()
        )))
    }

    /// Complete and parse a structured output. A malformed first answer is
    /// re-asked once with `reminder` appended to the prompt; a second
    /// malformed answer is a hard error.
    pub fn complete_structured<T>(
        &self,
        role: PromptRole,
        inputs: &PromptInputs,
        reminder: &str,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let prompt = self.render(role, inputs)?;
        self.complete_structured_prompt(role, &prompt, reminder, parse)
    }

    /// `complete_structured` over an already-rendered prompt.
    pub fn complete_structured_prompt<T>(
        &self,
        role: PromptRole,
        prompt: &str,
        reminder: &str,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let first = self.complete_prompt(role, prompt)?;
        match parse(&first) {
            Ok(value) => Ok(value),
            Err(first_err) => {
                log::warn!(
                    "malformed {} output, re-asking once: {first_err}",
                    role.as_str()
                );
                let re_prompt = format!("{prompt}\n\n{reminder}");
                let second = self.complete_prompt(role, &re_prompt)?;
                parse(&second).map_err(|second_err| Error::Parse {
                    detail: format!(
                        "role {} output malformed twice (first: {first_err}; re-ask: {second_err})",
                        role.as_str()
                    ),
                    snippet: second.chars().take(120).collect(),
                })
            }
        }
    }
}

/// Remove `excess` characters (plus room for the marker) from the middle of
/// `value`, keeping head and tail.
fn middle_truncate(value: &str, excess: usize) -> String {
    let chars: Vec<char> = value.chars().collect();
    let marker_len = ELISION_MARKER.chars().count();
    let remove = excess + marker_len;
    if chars.len() <= remove {
        return ELISION_MARKER.to_string();
    }
    let keep = chars.len() - remove;
    let head = keep / 2;
    let tail = keep - head;
    let mut out = String::new();
    out.extend(&chars[..head]);
    out.push_str(ELISION_MARKER);
    out.extend(&chars[chars.len() - tail..]);
    out
}
