//! Prompt templates and rendering.
//!
//! Templates use `${name}` placeholders. Rendering is a pure function of
//! (role, bindings): every placeholder must be bound, every binding must be
//! used, and values are inserted verbatim (no recursive expansion).

use std::collections::{BTreeMap, BTreeSet};

use crate::config::ReferencePolicy;
use crate::error::{Error, Result};
use crate::gateway::PromptRole;

const REFLECT_SINGLE: &str = include_str!("../../templates/reflect_single.txt");
const REFLECT_SINGLE_NOREF: &str = include_str!("../../templates/reflect_single_noref.txt");
const TAXONOMY_EXTEND: &str = include_str!("../../templates/taxonomy_extend.txt");
const ERROR_CLASSIFY: &str = include_str!("../../templates/error_classify.txt");
const ERROR_CLASSIFY_NOREF: &str = include_str!("../../templates/error_classify_noref.txt");
const REFLECT_ERROR_TYPE: &str = include_str!("../../templates/reflect_error_type.txt");
const ACTOR_REACT: &str = include_str!("../../templates/authored/actor_react.txt");
const MERGE_SUMMARIZE: &str = include_str!("../../templates/authored/merge_summarize.txt");
const FORESIGHT_PREDICT: &str = include_str!("../../templates/authored/foresight_predict.txt");
const FORESIGHT_DIFF: &str = include_str!("../../templates/authored/foresight_diff.txt");
const REFLECT_MIDCOURSE: &str = include_str!("../../templates/authored/reflect_midcourse.txt");

/// The fixed role → template assignment for one run. The reference policy
/// decides, at construction time, whether the reflection and classification
/// roles use the template variant that carries the reference plan.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    policy: ReferencePolicy,
}

impl TemplateSet {
    pub fn for_policy(policy: ReferencePolicy) -> Self {
        TemplateSet { policy }
    }

    pub fn policy(&self) -> ReferencePolicy {
        self.policy
    }

    /// The template text bound to `role` under this set's policy.
    pub fn template(&self, role: PromptRole) -> &'static str {
        match role {
            PromptRole::ActorReact => ACTOR_REACT,
            PromptRole::ReflectSingle => {
                if self.policy.reference_in_single() {
                    REFLECT_SINGLE
                } else {
                    REFLECT_SINGLE_NOREF
                }
            }
            PromptRole::TaxonomyExtend => TAXONOMY_EXTEND,
            PromptRole::ErrorClassify => {
                if self.policy.reference_in_intra() {
                    ERROR_CLASSIFY
                } else {
                    ERROR_CLASSIFY_NOREF
                }
            }
            PromptRole::ReflectErrorType => REFLECT_ERROR_TYPE,
            PromptRole::MergeSummarize => MERGE_SUMMARIZE,
            PromptRole::ForesightPredict => FORESIGHT_PREDICT,
            PromptRole::ForesightDiff => FORESIGHT_DIFF,
            PromptRole::ReflectMidcourse => REFLECT_MIDCOURSE,
        }
    }

    /// Render `role`'s template with `bindings`.
    pub fn render(&self, role: PromptRole, bindings: &BTreeMap<String, String>) -> Result<String> {
        render_str(self.template(role), bindings).map_err(|detail| Error::Template {
            role: role.as_str().to_string(),
            detail,
        })
    }
}

/// Names of the placeholders a template requires.
pub fn required_placeholders(template: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        if let Some(end) = after.find('}') {
            names.insert(after[..end].to_string());
            rest = &after[end + 1..];
        } else {
            break;
        }
    }
    names
}

/// Substitute `${name}` markers in one pass. Errors name the first missing
/// placeholder; bindings the template never uses are also errors, so typos
/// cannot silently drop content. Values are not rescanned, so a `${...}`
/// inside a bound value passes through as data.
fn render_str(
    template: &str,
    bindings: &BTreeMap<String, String>,
) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| "unterminated ${ marker in template".to_string())?;
        let name = &after[..end];
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
            return Err(format!("malformed placeholder name {name:?}"));
        }
        match bindings.get(name) {
            Some(value) => {
                used.insert(bindings.get_key_value(name).unwrap().0);
                out.push_str(value);
            }
            None => return Err(format!("missing binding for placeholder \"{name}\"")),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    for key in bindings.keys() {
        if !used.contains(key.as_str()) {
            return Err(format!(
                "unknown binding \"{key}\" not used by the template"
            ));
        }
    }
    Ok(out)
}

/// Convenience constructor for binding maps.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
