//! The trajectory pool: every artifact a run accumulates, with a fixed
//! on-disk layout and a deterministic iteration order.
//!
//! Storage is keyed by `(task_id, trial_index)` in `BTreeMap`s, so iteration
//! order is independent of insertion order — the property that makes reruns
//! and resumed runs byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::{read_json, read_jsonl, write_json_pretty, write_jsonl};
use crate::error::{Error, Result};
use crate::model::{
    ErrorPath, ErrorTaxonomy, Reflection, ReflectionLevel, ReflectionSource, Trajectory,
};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const ERROR_PATHS_FILE: &str = "error_paths.jsonl";
pub const REFLECTIONS_FILE: &str = "reflections.jsonl";
pub const TAXONOMY_FILE: &str = "taxonomy.json";

/// All artifacts of one synthesis run.
#[derive(Debug, Default, Clone)]
pub struct TrajectoryPool {
    trajectories: BTreeMap<(String, u32), Trajectory>,
    error_paths: BTreeMap<(String, u32), ErrorPath>,
    micro: BTreeMap<(String, u32), Reflection>,
    error_type: BTreeMap<String, Reflection>,
    fin: BTreeMap<(String, u32), Reflection>,
    pub taxonomy: ErrorTaxonomy,
}

impl TrajectoryPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a trajectory; a second trajectory for the same
    /// `(task_id, trial_index)` is rejected.
    pub fn insert_trajectory(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate()?;
        let key = (traj.task_id.clone(), traj.trial_index);
        if self.trajectories.contains_key(&key) {
            return Err(Error::DuplicateKey {
                task_id: key.0,
                trial_index: key.1,
            });
        }
        self.trajectories.insert(key, traj);
        Ok(())
    }

    pub fn insert_error_path(&mut self, path: ErrorPath) -> Result<()> {
        let key = (path.task_id.clone(), path.trial_index);
        let traj = self.trajectories.get(&key).ok_or_else(|| {
            Error::invalid(
                "error path",
                format!("({}, {}) has no trajectory in the pool", key.0, key.1),
            )
        })?;
        path.validate(&self.taxonomy, traj.steps.len())?;
        self.error_paths.insert(key, path);
        Ok(())
    }

    pub fn insert_reflection(&mut self, refl: Reflection) -> Result<()> {
        match (&refl.level, &refl.source) {
            (
                ReflectionLevel::Micro,
                ReflectionSource::Trial {
                    task_id,
                    trial_index,
                },
            ) => {
                self.micro.insert((task_id.clone(), *trial_index), refl);
            }
            (
                ReflectionLevel::Final,
                ReflectionSource::Trial {
                    task_id,
                    trial_index,
                },
            ) => {
                self.fin.insert((task_id.clone(), *trial_index), refl);
            }
            (ReflectionLevel::ErrorType, ReflectionSource::ErrorType { name }) => {
                self.error_type.insert(name.clone(), refl);
            }
            _ => {
                return Err(Error::invalid(
                    "reflection",
                    "level does not match source variant",
                ))
            }
        }
        Ok(())
    }

    pub fn trajectory(&self, task_id: &str, trial_index: u32) -> Option<&Trajectory> {
        self.trajectories.get(&(task_id.to_string(), trial_index))
    }

    pub fn error_path(&self, task_id: &str, trial_index: u32) -> Option<&ErrorPath> {
        self.error_paths.get(&(task_id.to_string(), trial_index))
    }

    pub fn micro_reflection(&self, task_id: &str, trial_index: u32) -> Option<&Reflection> {
        self.micro.get(&(task_id.to_string(), trial_index))
    }

    pub fn error_type_reflection(&self, canonical_name: &str) -> Option<&Reflection> {
        self.error_type.get(canonical_name)
    }

    pub fn final_reflection(&self, task_id: &str, trial_index: u32) -> Option<&Reflection> {
        self.fin.get(&(task_id.to_string(), trial_index))
    }

    /// Trajectories ordered by `(task_id, trial_index)`.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    /// Error paths ordered by `(task_id, trial_index)`.
    pub fn error_paths(&self) -> impl Iterator<Item = &ErrorPath> {
        self.error_paths.values()
    }

    pub fn micro_reflections(&self) -> impl Iterator<Item = &Reflection> {
        self.micro.values()
    }

    pub fn error_type_reflections(&self) -> impl Iterator<Item = &Reflection> {
        self.error_type.values()
    }

    pub fn final_reflections(&self) -> impl Iterator<Item = &Reflection> {
        self.fin.values()
    }

    pub fn final_reflection_count(&self) -> usize {
        self.fin.len()
    }

    /// Distinct task ids in ascending order.
    pub fn task_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .trajectories
            .keys()
            .map(|(task, _)| task.clone())
            .collect();
        ids.dedup();
        ids
    }

    /// Trials of one task in ascending trial order.
    pub fn trials_of(&self, task_id: &str) -> Vec<&Trajectory> {
        self.trajectories
            .range((task_id.to_string(), 0)..=(task_id.to_string(), u32::MAX))
            .map(|(_, t)| t)
            .collect()
    }

    /// All reflections in the persisted order: micro by `(task, trial)`,
    /// then error-type by canonical name, then final by `(task, trial)`.
    pub fn reflections_ordered(&self) -> Vec<&Reflection> {
        self.micro
            .values()
            .chain(self.error_type.values())
            .chain(self.fin.values())
            .collect()
    }

    /// Persist every artifact into `dir` (created if absent), rewriting files
    /// whole so partial earlier writes can never leak through.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let trajectories: Vec<&Trajectory> = self.trajectories.values().collect();
        write_jsonl(&dir.join(TRAJECTORIES_FILE), &trajectories)?;
        let paths: Vec<&ErrorPath> = self.error_paths.values().collect();
        write_jsonl(&dir.join(ERROR_PATHS_FILE), &paths)?;
        write_jsonl(&dir.join(REFLECTIONS_FILE), &self.reflections_ordered())?;
        write_json_pretty(&dir.join(TAXONOMY_FILE), &self.taxonomy)?;
        Ok(())
    }

    /// Load a pool from a run directory written by [`TrajectoryPool::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mut pool = TrajectoryPool::new();
        let tax_path = dir.join(TAXONOMY_FILE);
        if tax_path.exists() {
            pool.taxonomy = read_json(&tax_path)?;
        }
        let traj_path = dir.join(TRAJECTORIES_FILE);
        if traj_path.exists() {
            for traj in read_jsonl::<Trajectory>(&traj_path)? {
                pool.insert_trajectory(traj)?;
            }
        }
        let paths_path = dir.join(ERROR_PATHS_FILE);
        if paths_path.exists() {
            for path in read_jsonl::<ErrorPath>(&paths_path)? {
                pool.insert_error_path(path)?;
            }
        }
        let refl_path = dir.join(REFLECTIONS_FILE);
        if refl_path.exists() {
            for refl in read_jsonl::<Reflection>(&refl_path)? {
                pool.insert_reflection(refl)?;
            }
        }
        Ok(pool)
    }
}

/// Paths of the four pool artifacts inside a run directory.
pub fn artifact_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join(TRAJECTORIES_FILE),
        dir.join(ERROR_PATHS_FILE),
        dir.join(REFLECTIONS_FILE),
        dir.join(TAXONOMY_FILE),
    ]
}

/// Digest manifest of a run directory, keyed by file name.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunDigests(pub BTreeMap<String, String>);

pub fn digest_run_dir(dir: &Path) -> Result<RunDigests> {
    let mut map = BTreeMap::new();
    for path in artifact_paths(dir) {
        if path.exists() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            map.insert(name, crate::canonical::sha256_file(&path)?);
        }
    }
    Ok(RunDigests(map))
}
