//! Structured-output parsing: pull the first well-formed JSON payload out
//! of model text that may wrap it in prose or code fences, then validate
//! its shape.

use serde_json::Value;

use crate::error::{Error, Result};

/// Taxonomy-extension output: error-type names plus the rationale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyOutput {
    pub names: Vec<String>,
    pub rationale: String,
}

/// One classification element: (error_type, critique).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifiedError {
    pub error_type: String,
    pub critique: String,
}

/// Foresight deviation verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffOutput {
    pub significant_deviation: bool,
    pub reason: String,
}

fn snippet(text: &str) -> String {
    text.chars().take(120).collect()
}

/// First parseable JSON value in `text` that starts with `open`.
/// Brace-shaped prose that fails to parse is skipped, not fatal.
fn extract_first(text: &str, open: char) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c == open {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            if let Some(Ok(value)) = stream.next() {
                return Some(value);
            }
        }
    }
    None
}

/// Parse `{"error_taxonomy": [names...], "rationale": "..."}` out of prose
/// or fences. An empty names array is an error: the extension call is only
/// made when failures exist.
pub fn parse_taxonomy_output(text: &str) -> Result<TaxonomyOutput> {
    let value = extract_first(text, '{').ok_or_else(|| Error::Parse {
        detail: "no JSON object found in taxonomy output".into(),
        snippet: snippet(text),
    })?;
    let object = value.as_object().ok_or_else(|| Error::Parse {
        detail: "taxonomy payload is not a JSON object".into(),
        snippet: snippet(text),
    })?;
    let names_value = object.get("error_taxonomy").ok_or_else(|| Error::Parse {
        detail: "taxonomy output missing key \"error_taxonomy\"".into(),
        snippet: snippet(text),
    })?;
    let names_array = names_value.as_array().ok_or_else(|| Error::Parse {
        detail: "\"error_taxonomy\" is not an array".into(),
        snippet: snippet(&names_value.to_string()),
    })?;
    if names_array.is_empty() {
        return Err(Error::Parse {
            detail: "\"error_taxonomy\" array is empty".into(),
            snippet: snippet(text),
        });
    }
    let mut names = Vec::with_capacity(names_array.len());
    for (i, item) in names_array.iter().enumerate() {
        let name = item.as_str().ok_or_else(|| Error::Parse {
            detail: format!("\"error_taxonomy\"[{i}] is not a string"),
            snippet: snippet(&item.to_string()),
        })?;
        names.push(name.to_string());
    }
    let rationale = object
        .get("rationale")
        .ok_or_else(|| Error::Parse {
            detail: "taxonomy output missing key \"rationale\"".into(),
            snippet: snippet(text),
        })?
        .as_str()
        .ok_or_else(|| Error::Parse {
            detail: "\"rationale\" is not a string".into(),
            snippet: snippet(text),
        })?
        .to_string();
    Ok(TaxonomyOutput { names, rationale })
}

/// Parse `[{"error_type": "...", "critique": "..."}, ...]`; an empty array
/// is valid (successful trials). Element errors identify the index.
pub fn parse_classification_output(text: &str) -> Result<Vec<ClassifiedError>> {
    let value = extract_first(text, '[').ok_or_else(|| Error::Parse {
        detail: "no JSON array found in classification output".into(),
        snippet: snippet(text),
    })?;
    let array = value.as_array().expect("extract_first('[') yields arrays");
    let mut out = Vec::with_capacity(array.len());
    for (i, item) in array.iter().enumerate() {
        let object = item.as_object().ok_or_else(|| Error::Parse {
            detail: format!("classification element {i} is not an object"),
            snippet: snippet(&item.to_string()),
        })?;
        let error_type = object
            .get("error_type")
            .ok_or_else(|| Error::Parse {
                detail: format!("classification element {i} missing key \"error_type\""),
                snippet: snippet(&item.to_string()),
            })?
            .as_str()
            .ok_or_else(|| Error::Parse {
                detail: format!("classification element {i} \"error_type\" is not a string"),
                snippet: snippet(&item.to_string()),
            })?;
        let critique = object
            .get("critique")
            .ok_or_else(|| Error::Parse {
                detail: format!("classification element {i} missing key \"critique\""),
                snippet: snippet(&item.to_string()),
            })?
            .as_str()
            .ok_or_else(|| Error::Parse {
                detail: format!("classification element {i} \"critique\" is not a string"),
                snippet: snippet(&item.to_string()),
            })?;
        out.push(ClassifiedError {
            error_type: error_type.to_string(),
            critique: critique.to_string(),
        });
    }
    Ok(out)
}

/// Parse `{"significant_deviation": bool, "reason": "..."}`.
pub fn parse_diff_output(text: &str) -> Result<DiffOutput> {
    let value = extract_first(text, '{').ok_or_else(|| Error::Parse {
        detail: "no JSON object found in deviation output".into(),
        snippet: snippet(text),
    })?;
    let object = value
        .as_object()
        .expect("extract_first('{') yields objects");
    let significant_deviation = object
        .get("significant_deviation")
        .ok_or_else(|| Error::Parse {
            detail: "deviation output missing key \"significant_deviation\"".into(),
            snippet: snippet(text),
        })?
        .as_bool()
        .ok_or_else(|| Error::Parse {
            detail: "\"significant_deviation\" is not a boolean".into(),
            snippet: snippet(text),
        })?;
    let reason = object
        .get("reason")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok(DiffOutput {
        significant_deviation,
        reason,
    })
}

/// Parse one ReAct step ("Thought: ...\nAction: ...") out of actor output.
/// The thought may span lines; the action is the remainder of its line.
pub fn parse_react_step(text: &str) -> Result<(String, String)> {
    let mut thought_lines: Vec<&str> = Vec::new();
    let mut action: Option<String> = None;
    let mut in_thought = false;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("Action:") {
            action = Some(rest.trim().to_string());
            break;
        }
        if let Some(rest) = trimmed.strip_prefix("Thought:") {
            in_thought = true;
            thought_lines.push(rest.trim());
        } else if in_thought && !trimmed.is_empty() {
            thought_lines.push(trimmed);
        }
    }
    let action = action.ok_or_else(|| Error::Parse {
        detail: "actor output has no \"Action:\" line".into(),
        snippet: snippet(text),
    })?;
    if action.is_empty() {
        return Err(Error::Parse {
            detail: "actor output has an empty action".into(),
            snippet: snippet(text),
        });
    }
    if thought_lines.is_empty() {
        return Err(Error::Parse {
            detail: "actor output has no \"Thought:\" line before the action".into(),
            snippet: snippet(text),
        });
    }
    Ok((thought_lines.join(" "), action))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_plain_object() {
        let out = parse_taxonomy_output(
            r#"{"error_taxonomy": ["Budget Constraint Violation"], "rationale": "exceeds budget"}"#,
        )
        .unwrap();
        assert_eq!(out.names, vec!["Budget Constraint Violation"]);
        assert_eq!(out.rationale, "exceeds budget");
    }

    #[test]
    fn taxonomy_fenced_and_wrapped() {
        let text = "Here is my analysis.\n```json\n{\"error_taxonomy\": [\"A\", \"B\"], \"rationale\": \"r\"}\n```\nHope that helps!";
        let out = parse_taxonomy_output(text).unwrap();
        assert_eq!(out.names, vec!["A", "B"]);
    }

    #[test]
    fn taxonomy_missing_key_is_an_error() {
        let err = parse_taxonomy_output(r#"{"rationale": "x"}"#).unwrap_err();
        assert!(err.to_string().contains("error_taxonomy"), "{err}");
    }

    #[test]
    fn taxonomy_empty_names_is_an_error() {
        let err = parse_taxonomy_output(r#"{"error_taxonomy": [], "rationale": "x"}"#).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }

    #[test]
    fn taxonomy_skips_unparseable_brace_prose() {
        let text = "壊れた {not json here} but then {\"error_taxonomy\": [\"A\"], \"rationale\": \"r\"} trailing";
        let out = parse_taxonomy_output(text).unwrap();
        assert_eq!(out.names, vec!["A"]);
    }

    #[test]
    fn classification_empty_array_is_valid() {
        assert!(parse_classification_output("[]").unwrap().is_empty());
        assert!(
            parse_classification_output("The trial is clean.\n```json\n[]\n```")
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn classification_happy_path() {
        let out = parse_classification_output(
            r#"[{"error_type": "Budget Constraint Violation", "critique": "total exceeds 1900"}]"#,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].error_type, "Budget Constraint Violation");
        assert_eq!(out[0].critique, "total exceeds 1900");
    }

    #[test]
    fn classification_errors_identify_element_index() {
        let err = parse_classification_output(r#"[{"error_type": "X"}]"#).unwrap_err();
        assert!(err.to_string().contains("element 0"), "{err}");
        let err = parse_classification_output(
            r#"[{"error_type": "X", "critique": "c"}, {"critique": "y"}]"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("element 1"), "{err}");
    }

    #[test]
    fn diff_output_parses_both_verdicts() {
        let yes =
            parse_diff_output(r#"{"significant_deviation": true, "reason": "new constraint"}"#)
                .unwrap();
        assert!(yes.significant_deviation);
        assert_eq!(yes.reason, "new constraint");
        let no = parse_diff_output("```{\"significant_deviation\": false, \"reason\": \"\"}```")
            .unwrap();
        assert!(!no.significant_deviation);
    }

    #[test]
    fn react_step_parses_multiline_thought() {
        let (thought, action) =
            parse_react_step("Thought: first line\ncontinued here\nAction: lookup lodging\n")
                .unwrap();
        assert_eq!(thought, "first line continued here");
        assert_eq!(action, "lookup lodging");
    }

    #[test]
    fn react_step_requires_both_markers() {
        assert!(parse_react_step("Action: go").is_err());
        assert!(parse_react_step("Thought: hmm").is_err());
        assert!(parse_react_step("Thought: hmm\nAction:").is_err());
    }
}
