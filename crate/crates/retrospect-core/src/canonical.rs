//! Deterministic serialization: canonical JSON lines and content digests.
//!
//! Every persisted artifact goes through [`to_canonical_line`] so reruns are
//! byte-identical: UTF-8, `\n` line endings, one object per line, keys sorted.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Serialize `value` as a single JSON line with lexicographically sorted keys.
/// The returned string has no trailing newline.
pub fn to_canonical_line<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value stores objects in a BTreeMap (the `preserve_order`
    // feature is off), so a round-trip through Value sorts keys at every
    // nesting depth.
    let value =
        serde_json::to_value(value).map_err(|e| Error::invalid("serialization", e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| Error::invalid("serialization", e.to_string()))
}

/// Write one canonical JSON line per item, LF-terminated.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = to_canonical_line(item)?;
        writer
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Read a JSONL file into deserialized items; blank lines are rejected.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let item = serde_json::from_str(line).map_err(|e| Error::Parse {
            detail: format!("{}:{}: {e}", path.display(), lineno + 1),
            snippet: line.chars().take(120).collect(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Write `value` as pretty-printed canonical JSON (sorted keys, trailing LF).
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let value =
        serde_json::to_value(value).map_err(|e| Error::invalid("serialization", e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| Error::invalid("serialization", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read and deserialize a JSON file.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_line_sorts_keys_at_all_depths() {
        let value = json!({"zeta": {"b": 1, "a": 2}, "alpha": [ {"y": 0, "x": 1} ]});
        let line = to_canonical_line(&value).unwrap();
        assert_eq!(line, r#"{"alpha":[{"x":1,"y":0}],"zeta":{"a":2,"b":1}}"#);
    }

    #[test]
    fn sha256_matches_known_vector() {
        // `echo -n "" | sha256sum`
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        // `echo -n "abc" | sha256sum`
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn jsonl_round_trip_preserves_order_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        let items = vec![json!({"b": 1, "a": "x"}), json!({"k": [3, 2, 1]})];
        write_jsonl(&path, &items).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"a\":\"x\",\"b\":1}\n{\"k\":[3,2,1]}\n"
        );
        let back: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn rewriting_identical_items_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let items = vec![json!({"z": 1, "a": {"n": null}})];
        write_jsonl(&a, &items).unwrap();
        write_jsonl(&b, &items).unwrap();
        assert_eq!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());
    }
}
