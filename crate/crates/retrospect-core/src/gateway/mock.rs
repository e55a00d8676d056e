//! Deterministic scripted backend: ordered (role, substring) → response
//! rules loaded from a JSON file. First matching rule wins; with `strict`
//! set, an unmatched request is an error rather than a silent default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Backend, BackendError, BackendResponse, PromptRole};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub role: PromptRole,
    /// Substring the rendered prompt must contain.
    pub r#match: String,
    pub response: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub strict: bool,
    pub rules: Vec<MockRule>,
}

#[derive(Debug)]
pub struct ScriptedMock {
    script: MockScript,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        ScriptedMock { script }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let script: MockScript = crate::canonical::read_json(path)?;
        if script.rules.is_empty() {
            return Err(Error::Config(format!(
                "mock script {} has no rules",
                path.display()
            )));
        }
        Ok(ScriptedMock::new(script))
    }

    pub fn rule_count(&self) -> usize {
        self.script.rules.len()
    }
}

impl Backend for ScriptedMock {
    fn complete(
        &self,
        role: PromptRole,
        prompt: &str,
        _temperature: f64,
        _max_output_tokens: u32,
    ) -> std::result::Result<BackendResponse, BackendError> {
        for rule in &self.script.rules {
            if rule.role == role && prompt.contains(&rule.r#match) {
                return Ok(BackendResponse {
                    text: rule.response.clone(),
                    prompt_tokens: None,
                    completion_tokens: None,
                });
            }
        }
        if self.script.strict {
            let head: String = prompt.chars().take(160).collect();
            return Err(BackendError::fatal(format!(
                "no mock rule matched role {} (prompt head: {head:?})",
                role.as_str()
            )));
        }
        Ok(BackendResponse {
            text: format!("(no scripted response for role {})", role.as_str()),
            prompt_tokens: None,
            completion_tokens: None,
        })
    }

    fn name(&self) -> &'static str {
        "scripted-mock"
    }
}
