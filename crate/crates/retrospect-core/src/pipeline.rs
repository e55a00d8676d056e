//! Stage orchestration over a run directory.
//!
//! Each stage appends its outputs to the trajectory pool, persists the pool,
//! and records completion in a `STAGE` marker file. A rerun of the same
//! directory skips recorded stages without repeating a single completion
//! call, so an interrupted run resumes where it stopped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::{read_json, write_json_pretty, write_jsonl};
use crate::config::{ReductionFormula, RunConfig};
use crate::dataset::{emit_dataset, SftManifest};
use crate::envs::miniplan::{MiniPlanEnv, MiniPlanInteractiveEnv, MiniPlanTask};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::foresight::run_interactive;
use crate::gateway::Gateway;
use crate::metrics;
use crate::model::{ErrorPath, Outcome, TaskInstance, Trajectory};
use crate::pool::TrajectoryPool;
use crate::synthesis::{merge_all, reflect_error_types};
use crate::taxonomy::{classify_trajectory, run_taxonomy_stage};
use crate::trials::{run_retry_loop, run_trial};

pub const STAGE_FILE: &str = "STAGE";
pub const COUNTERS_FILE: &str = "counters.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRIAL_CURVE_FILE: &str = "trial_curve.csv";
pub const REDUCTION_TRAJECTORIES_FILE: &str = "reduction_trajectories.jsonl";
pub const REDUCTION_PATHS_FILE: &str = "reduction_paths.jsonl";
pub const INTERACTIVE_SUMMARY_FILE: &str = "interactive_summary.json";

/// The synthesis stages, in their only legal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Retry loops with single-trajectory reflections.
    Micro,
    /// Taxonomy induction and per-step error classification.
    Meso,
    /// Cross-task clustering and per-error-type reflections.
    Macro,
    /// Distillation of the per-trial inputs into final reflections.
    MacroMerge,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Micro, Stage::Meso, Stage::Macro, Stage::MacroMerge];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Micro => "micro",
            Stage::Meso => "meso",
            Stage::Macro => "macro",
            Stage::MacroMerge => "macro-merge",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "micro" => Ok(Stage::Micro),
            "meso" => Ok(Stage::Meso),
            "macro" => Ok(Stage::Macro),
            "macro-merge" => Ok(Stage::MacroMerge),
            other => Err(Error::Config(format!(
                "unknown stage {other:?}: expected micro, meso, macro, or macro-merge"
            ))),
        }
    }
}

/// Stages recorded as complete in the run directory, in recorded order.
pub fn completed_stages(run_dir: &Path) -> Result<Vec<Stage>> {
    let path = run_dir.join(STAGE_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(Stage::parse)
        .collect()
}

fn record_stage(run_dir: &Path, stage: Stage) -> Result<()> {
    use std::io::Write;
    let path = run_dir.join(STAGE_FILE);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(file, "{}", stage.as_str()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Growing tallies across stages, persisted so resumed runs keep them.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct Counters {
    /// Classification labels rejected because they name no taxonomy type.
    pub dropped_labels: u64,
    /// Tasks whose taxonomy extension stayed malformed and was skipped.
    pub skipped_tasks: u64,
    /// Foresight diff verdicts that stayed malformed after the re-ask.
    pub diff_parse_warnings: u64,
}

impl Counters {
    pub fn load(run_dir: &Path) -> Result<Counters> {
        let path = run_dir.join(COUNTERS_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Counters::default())
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_json_pretty(&run_dir.join(COUNTERS_FILE), self)
    }
}

/// Load every task fixture from a file or a directory of `*.json` files,
/// keyed by task id.
pub fn load_tasks(path: &Path) -> Result<BTreeMap<String, MiniPlanTask>> {
    let mut files: Vec<PathBuf> = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|ext| ext == "json") {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "task directory {} holds no .json fixtures",
                path.display()
            )));
        }
    } else if path.is_file() {
        files.push(path.to_path_buf());
    } else {
        return Err(Error::Config(format!(
            "task path {} is neither a file nor a directory",
            path.display()
        )));
    }
    let mut tasks = BTreeMap::new();
    for file in files {
        let task = MiniPlanTask::load(&file)?;
        if tasks.insert(task.task_id.clone(), task).is_some() {
            return Err(Error::Config(format!(
                "duplicate task_id in {}",
                file.display()
            )));
        }
    }
    Ok(tasks)
}

/// Everything a run needs in memory: config, backend gateway, and tasks.
pub struct PipelineRun {
    pub config: RunConfig,
    pub gateway: Gateway,
    pub tasks: BTreeMap<String, MiniPlanTask>,
    pub instances: BTreeMap<String, TaskInstance>,
}

impl PipelineRun {
    pub fn prepare(config: RunConfig) -> Result<PipelineRun> {
        config.validate()?;
        let gateway = Gateway::from_config(&config)?;
        let tasks = load_tasks(&config.tasks)?;
        let instances = tasks
            .iter()
            .map(|(id, task)| (id.clone(), task.instance()))
            .collect();
        Ok(PipelineRun {
            config,
            gateway,
            tasks,
            instances,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.config.run_dir
    }

    fn env_for(&self, task_id: &str) -> Result<Box<dyn Environment>> {
        let task = self
            .tasks
            .get(task_id)
            .ok_or_else(|| Error::invalid("pipeline", format!("unknown task {task_id}")))?;
        Ok(Box::new(MiniPlanEnv::new(task.clone())?))
    }

    /// Stage 1: the retry loop per task, ascending task id.
    pub fn run_micro(&self, pool: &mut TrajectoryPool) -> Result<()> {
        for (task_id, instance) in &self.instances {
            let mut make_env = || self.env_for(task_id);
            let output = run_retry_loop(
                &self.gateway,
                instance,
                &mut make_env,
                self.config.k,
                self.config.max_steps as usize,
                self.config.exhaust_trials,
            )?;
            for trajectory in output.trajectories {
                pool.insert_trajectory(trajectory)?;
            }
            for reflection in output.reflections {
                pool.insert_reflection(reflection)?;
            }
        }
        Ok(())
    }

    /// Stage 2: taxonomy induction plus per-step classification.
    pub fn run_meso(&self, pool: &mut TrajectoryPool, counters: &mut Counters) -> Result<()> {
        let stats = run_taxonomy_stage(
            &self.gateway,
            &self.instances,
            pool,
            self.config.interleaved,
            self.config.task_parallelism,
        )?;
        counters.dropped_labels += stats.dropped_labels;
        counters.skipped_tasks += stats.skipped_tasks;
        Ok(())
    }

    /// Stage 3: cluster by error type and reflect per cluster.
    pub fn run_macro(&self, pool: &mut TrajectoryPool) -> Result<()> {
        for reflection in reflect_error_types(&self.gateway, pool)? {
            pool.insert_reflection(reflection)?;
        }
        Ok(())
    }

    /// Stage 4: merge micro, rationale, and error-type reflections.
    pub fn run_merge(&self, pool: &mut TrajectoryPool) -> Result<()> {
        for reflection in merge_all(&self.gateway, &self.instances, pool)? {
            pool.insert_reflection(reflection)?;
        }
        Ok(())
    }
}

/// What `run_pipeline` did: which stages ran here and which were already
/// recorded, plus headline pool counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PipelineSummary {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
    pub trajectories: usize,
    pub error_paths: usize,
    pub final_reflections: usize,
}

/// Run (or resume) the four synthesis stages over `config.run_dir`.
pub fn run_pipeline(config: RunConfig) -> Result<PipelineSummary> {
    run_pipeline_through(config, Stage::MacroMerge)
}

/// Run (or resume) the synthesis stages up to and including `through`.
pub fn run_pipeline_through(config: RunConfig, through: Stage) -> Result<PipelineSummary> {
    let run = PipelineRun::prepare(config)?;
    let run_dir = run.run_dir().to_path_buf();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let completed = completed_stages(&run_dir)?;
    let mut pool = if completed.is_empty() {
        TrajectoryPool::new()
    } else {
        TrajectoryPool::load(&run_dir)?
    };
    let mut counters = Counters::load(&run_dir)?;
    let mut summary = PipelineSummary {
        ran: Vec::new(),
        skipped: Vec::new(),
        trajectories: 0,
        error_paths: 0,
        final_reflections: 0,
    };
    for stage in Stage::ALL {
        if completed.contains(&stage) {
            summary.skipped.push(stage.as_str().to_string());
        } else {
            match stage {
                Stage::Micro => run.run_micro(&mut pool)?,
                Stage::Meso => run.run_meso(&mut pool, &mut counters)?,
                Stage::Macro => run.run_macro(&mut pool)?,
                Stage::MacroMerge => run.run_merge(&mut pool)?,
            }
            pool.save(&run_dir)?;
            counters.save(&run_dir)?;
            record_stage(&run_dir, stage)?;
            summary.ran.push(stage.as_str().to_string());
        }
        if stage == through {
            break;
        }
    }
    summary.trajectories = pool.trajectories().count();
    summary.error_paths = pool.error_paths().count();
    summary.final_reflections = pool.final_reflection_count();
    Ok(summary)
}

/// Emit the fine-tuning corpus from a completed run directory.
pub fn emit_corpus(config: &RunConfig) -> Result<SftManifest> {
    let run = PipelineRun::prepare(config.clone())?;
    require_complete(run.run_dir())?;
    let pool = TrajectoryPool::load(run.run_dir())?;
    emit_dataset(
        run.run_dir(),
        &pool,
        &run.instances,
        config.seed,
        config.split_ratio,
    )
}

fn require_complete(run_dir: &Path) -> Result<()> {
    let completed = completed_stages(run_dir)?;
    for stage in Stage::ALL {
        if !completed.contains(&stage) {
            return Err(Error::stage(stage.as_str(), "incomplete"));
        }
    }
    Ok(())
}

/// Everything `evaluate` reports, persisted as `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Share of tasks with at least one passing trial, percent.
    pub pass_rate: f64,
    /// Share of tasks whose last submitted plan matches the reference
    /// exactly after whitespace normalization, percent.
    pub em_accuracy: f64,
    /// Error reduction of the injected-reflection retry, in [0, 1];
    /// absent when no task qualified for the retry protocol.
    pub error_reduction_rate: Option<f64>,
    pub reduction_formula: String,
    /// Cumulative pass rate by trial budget, percent.
    pub trial_curve: Vec<f64>,
    pub counters: Counters,
}

/// Score a completed run directory and write `metrics.json`,
/// `trial_curve.csv`, and the reduction-protocol artifacts.
pub fn evaluate(config: &RunConfig) -> Result<EvalReport> {
    let run = PipelineRun::prepare(config.clone())?;
    let run_dir = run.run_dir().to_path_buf();
    require_complete(&run_dir)?;
    let pool = TrajectoryPool::load(&run_dir)?;
    let counters = Counters::load(&run_dir)?;

    let mut solved = 0usize;
    let mut pass_trials: Vec<Option<u32>> = Vec::new();
    let mut em_pairs: Vec<(String, String)> = Vec::new();
    for (task_id, instance) in &run.instances {
        let trials = pool.trials_of(task_id);
        if trials.is_empty() {
            return Err(Error::stage(
                "evaluate",
                format!("no trajectories recorded for task {task_id}"),
            ));
        }
        let first_pass = trials
            .iter()
            .find(|t| t.outcome == Outcome::Pass)
            .map(|t| t.trial_index);
        if first_pass.is_some() {
            solved += 1;
        }
        pass_trials.push(first_pass);
        let last = trials.last().expect("non-empty");
        em_pairs.push((
            last.final_output.clone(),
            instance.reference.clone().unwrap_or_default(),
        ));
    }
    let pass_rate = metrics::pass_rate(solved, run.instances.len())?;
    let em_accuracy = metrics::em_accuracy(&em_pairs)?;
    let trial_curve = metrics::trial_curve(&pass_trials, config.k)?;

    let (error_reduction_rate, retry_trajectories, retry_paths) =
        reduction_protocol(&run, &pool, config.reduction)?;
    write_jsonl(
        &run_dir.join(REDUCTION_TRAJECTORIES_FILE),
        &retry_trajectories,
    )?;
    write_jsonl(&run_dir.join(REDUCTION_PATHS_FILE), &retry_paths)?;

    counters.save(&run_dir)?;
    let report = EvalReport {
        pass_rate,
        em_accuracy,
        error_reduction_rate,
        reduction_formula: config.reduction.as_str().to_string(),
        trial_curve: trial_curve.clone(),
        counters,
    };
    write_json_pretty(&run_dir.join(METRICS_FILE), &report)?;
    let csv_path = run_dir.join(TRIAL_CURVE_FILE);
    std::fs::write(&csv_path, metrics::trial_curve_csv(&trial_curve))
        .map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

/// The injected-reflection retry: every task whose last trial failed runs
/// one more trial with that trial's final reflection injected; the retry is
/// classified against the frozen taxonomy and error counts are compared.
fn reduction_protocol(
    run: &PipelineRun,
    pool: &TrajectoryPool,
    formula: ReductionFormula,
) -> Result<(Option<f64>, Vec<Trajectory>, Vec<ErrorPath>)> {
    let mut before: Vec<ErrorPath> = Vec::new();
    let mut retry_trajectories: Vec<Trajectory> = Vec::new();
    let mut retry_paths: Vec<ErrorPath> = Vec::new();
    for (task_id, instance) in &run.instances {
        let trials = pool.trials_of(task_id);
        let Some(last) = trials.last() else { continue };
        if last.outcome != Outcome::Fail {
            continue;
        }
        let final_reflection = pool
            .final_reflection(task_id, last.trial_index)
            .ok_or_else(|| {
                Error::stage(
                    "evaluate",
                    format!(
                        "no final reflection for failed trial ({task_id}, {})",
                        last.trial_index
                    ),
                )
            })?;
        let before_path = pool.error_path(task_id, last.trial_index).ok_or_else(|| {
            Error::stage(
                "evaluate",
                format!(
                    "no error path for failed trial ({task_id}, {})",
                    last.trial_index
                ),
            )
        })?;
        before.push(before_path.clone());
        let mut env = run.env_for(task_id)?;
        let retry = run_trial(
            &run.gateway,
            instance,
            env.as_mut(),
            last.trial_index + 1,
            &final_reflection.text,
            run.config.max_steps as usize,
        )?;
        if retry.outcome != Outcome::Aborted {
            let (path, dropped) =
                classify_trajectory(&run.gateway, instance, &retry, &pool.taxonomy)?;
            let _ = dropped; // retry drops are not folded into run counters
            retry_paths.push(path);
        }
        retry_trajectories.push(retry);
    }
    if before.is_empty() {
        return Ok((None, retry_trajectories, retry_paths));
    }
    let rate = metrics::error_reduction(&before, &retry_paths, formula)?;
    Ok((Some(rate), retry_trajectories, retry_paths))
}

/// Per-episode record of an interactive run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InteractiveEpisode {
    pub task_id: String,
    pub outcome: Outcome,
    pub turns: usize,
    pub deviations: usize,
    pub reflections_triggered: usize,
    pub midcourse_reflections: Vec<String>,
    pub final_reflection: String,
}

/// Run the foresight loop over every task and persist the episodes.
pub fn run_interactive_pipeline(config: RunConfig) -> Result<Vec<InteractiveEpisode>> {
    let run = PipelineRun::prepare(config)?;
    let run_dir = run.run_dir().to_path_buf();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let mut pool = TrajectoryPool::new();
    let mut counters = Counters::load(&run_dir)?;
    let mut episodes = Vec::new();
    for (task_id, task) in &run.tasks {
        let instance = task.interactive_instance();
        let mut env = MiniPlanInteractiveEnv::new(task.clone())?;
        let outcome = run_interactive(
            &run.gateway,
            &instance,
            &mut env,
            run.config.max_steps as usize,
            run.config.accumulate,
        )?;
        counters.diff_parse_warnings += outcome.diff_parse_warnings;
        episodes.push(InteractiveEpisode {
            task_id: task_id.clone(),
            outcome: outcome.trajectory.outcome,
            turns: outcome.trajectory.foresight.len(),
            deviations: outcome
                .trajectory
                .foresight
                .iter()
                .filter(|t| t.deviated)
                .count(),
            reflections_triggered: outcome
                .trajectory
                .foresight
                .iter()
                .filter(|t| t.reflection_triggered)
                .count(),
            midcourse_reflections: outcome.midcourse_reflections.clone(),
            final_reflection: outcome.final_reflection.clone(),
        });
        if let Some(reflection) = outcome.active_reflection() {
            pool.insert_reflection(reflection)?;
        }
        pool.insert_trajectory(outcome.trajectory)?;
    }
    pool.save(&run_dir)?;
    counters.save(&run_dir)?;
    write_json_pretty(&run_dir.join(INTERACTIVE_SUMMARY_FILE), &episodes)?;
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for stage in Stage::ALL {
            assert_eq!(Stage::parse(stage.as_str()).unwrap(), stage);
        }
        assert_eq!(Stage::parse("mezzo").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stage_marker_appends_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        assert!(completed_stages(dir.path()).unwrap().is_empty());
        record_stage(dir.path(), Stage::Micro).unwrap();
        record_stage(dir.path(), Stage::Meso).unwrap();
        assert_eq!(
            completed_stages(dir.path()).unwrap(),
            vec![Stage::Micro, Stage::Meso]
        );
    }

    #[test]
    fn counters_default_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = Counters::load(dir.path()).unwrap();
        assert_eq!(loaded, Counters::default());
        let counters = Counters {
            dropped_labels: 3,
            skipped_tasks: 1,
            diff_parse_warnings: 2,
        };
        counters.save(dir.path()).unwrap();
        assert_eq!(Counters::load(dir.path()).unwrap(), counters);
    }

    #[test]
    fn incomplete_run_fails_evaluation_with_the_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        record_stage(dir.path(), Stage::Micro).unwrap();
        record_stage(dir.path(), Stage::Meso).unwrap();
        record_stage(dir.path(), Stage::Macro).unwrap();
        let err = require_complete(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "stage macro-merge incomplete");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn load_tasks_accepts_dir_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let a = MiniPlanTask::example("t01", 1900);
        let b = MiniPlanTask::example("t02", 2000);
        write_json_pretty(&dir.path().join("a.json"), &a).unwrap();
        write_json_pretty(&dir.path().join("b.json"), &b).unwrap();
        let tasks = load_tasks(dir.path()).unwrap();
        assert_eq!(
            tasks.keys().cloned().collect::<Vec<_>>(),
            vec!["t01", "t02"]
        );
        write_json_pretty(&dir.path().join("c.json"), &a).unwrap();
        let err = load_tasks(dir.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate task_id"), "{err}");
        assert!(load_tasks(&dir.path().join("missing")).is_err());
    }
}
