//! Emit the supervised fine-tuning corpus: one record per final reflection,
//! with the full task context as input and the reflection as target, split
//! into train/validation by task so no task straddles the boundary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_file, sha256_hex, write_json_pretty, write_jsonl};
use crate::error::{Error, Result};
use crate::model::{ReflectionSource, TaskInstance};
use crate::pool::TrajectoryPool;

pub const TRAIN_FILE: &str = "sft_train.jsonl";
pub const VAL_FILE: &str = "sft_val.jsonl";
pub const TRAIN_FLAT_FILE: &str = "sft_train_flat.jsonl";
pub const VAL_FLAT_FILE: &str = "sft_val_flat.jsonl";
pub const MANIFEST_FILE: &str = "sft_manifest.json";

/// One training record for the retrospective model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SftRecord {
    /// `task_id#trial_index`.
    pub id: String,
    pub input: String,
    pub target: String,
    pub meta: SftMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SftMeta {
    pub task_id: String,
    pub trial_index: u32,
    /// Canonical error types the merged reflection drew on.
    pub error_types: Vec<String>,
}

/// The flattened form downstream trainers ingest directly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FlatRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SftManifest {
    pub seed: u64,
    pub split_ratio: f64,
    pub task_count: usize,
    pub train_tasks: Vec<String>,
    pub val_tasks: Vec<String>,
    pub train_records: usize,
    pub val_records: usize,
    /// How the split was derived, for reproduction without this codebase.
    pub split_algorithm: String,
    /// sha256 of each emitted file.
    pub digests: BTreeMap<String, String>,
}

/// Build the input text: the task context and the trajectory, with one
/// named section per part.
pub fn record_input(task: &TaskInstance, transcript: &str) -> String {
    format!(
        "Instruction:\n{}\n\nQuery:\n{}\n\nBackground:\n{}\n\nTrajectory:\n{}",
        task.instruction, task.query, task.background, transcript
    )
}

/// One record per final reflection in the pool, ordered by (task, trial).
pub fn collect_records(
    pool: &TrajectoryPool,
    tasks: &BTreeMap<String, TaskInstance>,
) -> Result<Vec<SftRecord>> {
    let mut records = Vec::new();
    for reflection in pool.final_reflections() {
        let ReflectionSource::Trial {
            task_id,
            trial_index,
        } = &reflection.source
        else {
            return Err(Error::invalid(
                "dataset",
                "final reflection without a trial source",
            ));
        };
        let task = tasks.get(task_id).ok_or_else(|| {
            Error::invalid("dataset", format!("pool references unknown task {task_id}"))
        })?;
        let trajectory = pool.trajectory(task_id, *trial_index).ok_or_else(|| {
            Error::invalid(
                "dataset",
                format!("final reflection for missing trajectory ({task_id}, {trial_index})"),
            )
        })?;
        let error_types = reflection
            .manifest
            .as_ref()
            .map(|m| m.error_types.clone())
            .unwrap_or_default();
        records.push(SftRecord {
            id: format!("{task_id}#{trial_index}"),
            input: record_input(task, &trajectory.transcript()),
            target: reflection.text.clone(),
            meta: SftMeta {
                task_id: task_id.clone(),
                trial_index: *trial_index,
                error_types,
            },
        });
    }
    Ok(records)
}

/// Deterministic seeded shuffle: order task ids by the digest of
/// `"{seed}:{task_id}"`, ascending.
pub fn shuffled_task_ids(task_ids: &[String], seed: u64) -> Vec<String> {
    let mut keyed: Vec<(String, String)> = task_ids
        .iter()
        .map(|id| (sha256_hex(format!("{seed}:{id}").as_bytes()), id.clone()))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, id)| id).collect()
}

/// Number of train tasks: `ratio * n`, rounded half-up.
pub fn train_task_count(n_tasks: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "split_ratio must be within [0, 1], got {ratio}"
        )));
    }
    // Half-up on the exact decimal: floor(ratio * n + 0.5). The inputs are
    // small (a config ratio and a task count), so f64 is exact enough
    // relative to the .5 boundary after scaling by 1e6.
    let scaled = (ratio * 1_000_000.0).round() as u64 * n_tasks as u64;
    Ok(((scaled + 500_000) / 1_000_000) as usize)
}

/// Train records, val records, train task ids, val task ids.
pub type SplitParts = (Vec<SftRecord>, Vec<SftRecord>, Vec<String>, Vec<String>);

/// Split records into (train, val) by task.
pub fn split_records(records: &[SftRecord], seed: u64, ratio: f64) -> Result<SplitParts> {
    let mut task_ids: Vec<String> = records
        .iter()
        .map(|r| r.meta.task_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    task_ids.sort();
    let shuffled = shuffled_task_ids(&task_ids, seed);
    let n_train = train_task_count(shuffled.len(), ratio)?;
    let train_tasks: std::collections::BTreeSet<String> =
        shuffled[..n_train].iter().cloned().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for record in records {
        if train_tasks.contains(&record.meta.task_id) {
            train.push(record.clone());
        } else {
            val.push(record.clone());
        }
    }
    let mut train_task_list: Vec<String> = train_tasks.into_iter().collect();
    train_task_list.sort();
    let mut val_task_list: Vec<String> = shuffled[n_train..].to_vec();
    val_task_list.sort();
    Ok((train, val, train_task_list, val_task_list))
}

fn flatten(records: &[SftRecord]) -> Vec<FlatRecord> {
    records
        .iter()
        .map(|r| FlatRecord {
            prompt: r.input.clone(),
            completion: r.target.clone(),
        })
        .collect()
}

/// Write the corpus files and manifest into `dir`.
pub fn emit_dataset(
    dir: &Path,
    pool: &TrajectoryPool,
    tasks: &BTreeMap<String, TaskInstance>,
    seed: u64,
    ratio: f64,
) -> Result<SftManifest> {
    let records = collect_records(pool, tasks)?;
    if records.is_empty() {
        return Err(Error::stage(
            "emit-dataset",
            "no final reflections to emit; run the synthesis stages first",
        ));
    }
    let (train, val, train_tasks, val_tasks) = split_records(&records, seed, ratio)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(TRAIN_FILE), &train)?;
    write_jsonl(&dir.join(VAL_FILE), &val)?;
    write_jsonl(&dir.join(TRAIN_FLAT_FILE), &flatten(&train))?;
    write_jsonl(&dir.join(VAL_FLAT_FILE), &flatten(&val))?;
    let mut digests = BTreeMap::new();
    for name in [TRAIN_FILE, VAL_FILE, TRAIN_FLAT_FILE, VAL_FLAT_FILE] {
        digests.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = SftManifest {
        seed,
        split_ratio: ratio,
        task_count: train_tasks.len() + val_tasks.len(),
        train_tasks,
        val_tasks,
        train_records: train.len(),
        val_records: val.len(),
        split_algorithm: "tasks ordered by sha256(\"{seed}:{task_id}\") ascending; first round_half_up(ratio * n_tasks) tasks train; records follow their task".to_string(),
        digests,
    };
    write_json_pretty(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
