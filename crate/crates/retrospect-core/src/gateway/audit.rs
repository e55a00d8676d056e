//! Append-only audit log of every backend attempt.
//!
//! One JSONL row per attempt with timestamps and token counts when the
//! backend reports them. Writes are serialized behind a mutex; the log is
//! deliberately excluded from pinned artifact digests because timestamps
//! and thread interleaving make it non-reproducible byte-for-byte.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{BackendResponse, PromptRole};

pub const AUDIT_FILE: &str = "audit.jsonl";

/// One backend attempt (success or failure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub role: PromptRole,
    /// 1-based attempt number within one logical completion.
    pub attempt: u32,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

enum Sink {
    File(BufWriter<File>),
    Memory(Vec<AuditEntry>),
}

/// Serialized, append-only sink for [`AuditEntry`] rows.
pub struct AuditLog {
    sink: Mutex<Sink>,
    seq: AtomicU64,
    path: Option<PathBuf>,
}

impl AuditLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(AuditLog {
            sink: Mutex::new(Sink::File(BufWriter::new(file))),
            seq: AtomicU64::new(0),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn in_memory() -> Self {
        AuditLog {
            sink: Mutex::new(Sink::Memory(Vec::new())),
            seq: AtomicU64::new(0),
            path: None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn record_ok(&self, role: PromptRole, attempt: u32, prompt: &str, resp: &BackendResponse) {
        self.push(AuditEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            timestamp_ms: now_ms(),
            role,
            attempt,
            prompt: prompt.to_string(),
            response: Some(resp.text.clone()),
            error: None,
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        });
    }

    pub fn record_err(&self, role: PromptRole, attempt: u32, prompt: &str, detail: &str) {
        self.push(AuditEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            timestamp_ms: now_ms(),
            role,
            attempt,
            prompt: prompt.to_string(),
            response: None,
            error: Some(detail.to_string()),
            prompt_tokens: None,
            completion_tokens: None,
        });
    }

    pub fn entry_count(&self) -> u64 {
        self.seq.load(Ordering::SeqCst)
    }

    /// In-memory entries (empty for file-backed logs; read the file instead).
    pub fn memory_entries(&self) -> Vec<AuditEntry> {
        match &*self.sink.lock().expect("audit lock poisoned") {
            Sink::Memory(entries) => entries.clone(),
            Sink::File(_) => Vec::new(),
        }
    }

    fn push(&self, entry: AuditEntry) {
        let mut sink = self.sink.lock().expect("audit lock poisoned");
        match &mut *sink {
            Sink::File(writer) => {
                // Canonical line form keeps the log greppable and parseable;
                // a write failure must not abort the pipeline.
                match crate::canonical::to_canonical_line(&entry) {
                    Ok(line) => {
                        if writer
                            .write_all(line.as_bytes())
                            .and_then(|_| writer.write_all(b"\n"))
                            .and_then(|_| writer.flush())
                            .is_err()
                        {
                            log::warn!("audit write failed for seq {}", entry.seq);
                        }
                    }
                    Err(e) => log::warn!("audit serialization failed: {e}"),
                }
            }
            Sink::Memory(entries) => entries.push(entry),
        }
    }
}

/// Read all entries back from a file-backed audit log.
pub fn read_audit(path: &Path) -> Result<Vec<AuditEntry>> {
    crate::canonical::read_jsonl(path)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
