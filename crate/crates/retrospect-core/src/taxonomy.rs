//! Error-taxonomy induction and per-step error classification.
//!
//! Phase one folds tasks in ascending id order, asking the model to extend
//! the running taxonomy from each task's trials and recording the per-task
//! rationale. Phase two classifies every step of every finished trajectory
//! against the taxonomy, yielding one error path per trajectory. With
//! `interleaved` a task is classified right after its extension (against the
//! taxonomy as of that task); otherwise classification runs against the
//! frozen final taxonomy, parallelized across trajectories.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gateway::parse::{parse_classification_output, ClassifiedError};
use crate::gateway::{Gateway, PromptInputs, PromptRole};
use crate::model::{
    normalize_error_name, ErrorLabel, ErrorPath, ErrorTaxonomy, Outcome, Step, TaskInstance,
    Trajectory,
};
use crate::pool::TrajectoryPool;

/// Appended when a structured response cannot be parsed on first ask.
const TAXONOMY_REMINDER: &str = "Answer with a single JSON object with keys \"error_taxonomy\" (array of strings) and \"rationale\" (string).";
const CLASSIFY_REMINDER: &str = "Answer with a single JSON array of objects, each with string keys \"error_type\" and \"critique\". Answer [] when the step has no error.";

/// Placeholder shown when a task has no recorded rationale.
const NO_RATIONALE: &str = "(no rationale recorded)";
/// Placeholder shown when the taxonomy is still empty.
const EMPTY_TAXONOMY: &str = "(empty)";
/// Shown in place of a reference plan when a task does not carry one.
const NO_REFERENCE: &str = "(none provided)";

/// Counters the stage reports upward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TaxonomyStats {
    /// Labels discarded because their type stayed outside the taxonomy
    /// even after the corrective re-ask.
    pub dropped_labels: u64,
    /// Tasks whose extension output stayed malformed after the re-ask.
    pub skipped_tasks: u64,
}

/// Render the taxonomy for a prompt: one display name per line.
pub fn taxonomy_listing(taxonomy: &ErrorTaxonomy) -> String {
    if taxonomy.is_empty() {
        return EMPTY_TAXONOMY.to_string();
    }
    taxonomy
        .types
        .iter()
        .map(|t| format!("- {}", t.display_name))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The rationale recorded for a task, if any.
pub fn rationale_for<'a>(taxonomy: &'a ErrorTaxonomy, task_id: &str) -> Option<&'a str> {
    taxonomy
        .rationales
        .iter()
        .find(|r| r.task_id == task_id)
        .map(|r| r.rationale.as_str())
}

fn outcome_word(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Pass => "success",
        Outcome::Fail => "fail",
        Outcome::Aborted => "aborted",
    }
}

fn step_block(step: &Step) -> String {
    let mut out = String::new();
    if let Some(thought) = &step.thought {
        out.push_str("Thought: ");
        out.push_str(thought);
        out.push('\n');
    }
    out.push_str("Action: ");
    out.push_str(&step.action);
    out.push_str("\nObservation: ");
    out.push_str(&step.observation);
    out
}

/// Ask the model to extend the taxonomy from one task's trials.
///
/// Returns false when the output stayed malformed after the re-ask; the
/// task is then skipped and the taxonomy left unchanged.
pub fn extend_taxonomy_for_task(
    gateway: &Gateway,
    task: &TaskInstance,
    trials: &[&Trajectory],
    taxonomy: &mut ErrorTaxonomy,
) -> Result<bool> {
    if trials.is_empty() {
        return Err(Error::invalid(
            "taxonomy stage",
            format!("task {} has no trajectories", task.task_id),
        ));
    }
    let blocks: Vec<String> = trials
        .iter()
        .map(|t| {
            format!(
                "Trial {} ({}):\n{}",
                t.trial_index,
                outcome_word(t.outcome),
                t.transcript()
            )
        })
        .collect();
    let inputs = PromptInputs::plain(crate::gateway::template::bindings([
        ("text", task.background.as_str()),
        ("query", task.query.as_str()),
    ]))
    .bind("error_taxonomy", taxonomy_listing(taxonomy))
    .repeated("trials", blocks)
    .truncatable("text");
    let output = match gateway.complete_structured(
        PromptRole::TaxonomyExtend,
        &inputs,
        TAXONOMY_REMINDER,
        crate::gateway::parse::parse_taxonomy_output,
    ) {
        Ok(output) => output,
        Err(Error::Parse { detail, .. }) => {
            log::warn!(
                "skipping taxonomy extension for task {}: {detail}",
                task.task_id
            );
            return Ok(false);
        }
        Err(e) => return Err(e),
    };
    for name in &output.names {
        match taxonomy.push_type(name) {
            Ok(_) => {}
            Err(e) => log::warn!(
                "ignoring unusable error-type name {name:?} from task {}: {e}",
                task.task_id
            ),
        }
    }
    taxonomy.record_rationale(&task.task_id, &output.rationale);
    Ok(true)
}

/// Classify every step of one trajectory against a frozen taxonomy.
pub fn classify_trajectory(
    gateway: &Gateway,
    task: &TaskInstance,
    trajectory: &Trajectory,
    taxonomy: &ErrorTaxonomy,
) -> Result<(ErrorPath, u64)> {
    let rationale = rationale_for(taxonomy, &task.task_id)
        .unwrap_or(NO_RATIONALE)
        .to_string();
    let transcript = trajectory.transcript();
    let listing = taxonomy_listing(taxonomy);
    let mut labels: Vec<ErrorLabel> = Vec::new();
    let mut dropped = 0u64;
    for step in &trajectory.steps {
        let mut inputs = PromptInputs::plain(crate::gateway::template::bindings([
            ("text", task.background.as_str()),
            ("query", task.query.as_str()),
        ]))
        .bind("error_taxonomy", listing.as_str())
        .bind("rationale", rationale.as_str())
        .bind("trial_id", trajectory.trial_index.to_string())
        .bind("current_trial", transcript.as_str())
        .bind("current_step", step_block(step))
        .truncatable("text");
        if gateway.templates().policy().reference_in_intra() {
            inputs = inputs.bind(
                "annotated_plan",
                task.reference.as_deref().unwrap_or(NO_REFERENCE),
            );
        }
        let prompt = gateway.render(PromptRole::ErrorClassify, &inputs)?;
        let classified = match gateway.complete_structured_prompt(
            PromptRole::ErrorClassify,
            &prompt,
            CLASSIFY_REMINDER,
            parse_classification_output,
        ) {
            Ok(list) => list,
            Err(Error::Parse { detail, .. }) => {
                log::warn!(
                    "classification for ({}, {}) step {} stayed malformed: {detail}; no labels recorded",
                    task.task_id,
                    trajectory.trial_index,
                    step.index
                );
                continue;
            }
            Err(e) => return Err(e),
        };
        let (mut valid, invalid) = split_by_validity(classified, taxonomy);
        if !invalid.is_empty() {
            // One corrective re-ask that lists the valid types; its answer
            // replaces the step's classification entirely.
            let correction = format!(
                "{prompt}\n\nSome of your error types are not in the taxonomy. You can only select error types from this list:\n{listing}\nAnswer again with a single JSON array of objects with string keys \"error_type\" and \"critique\"."
            );
            match gateway
                .complete_prompt(PromptRole::ErrorClassify, &correction)
                .and_then(|text| parse_classification_output(&text))
            {
                Ok(reclassified) => {
                    let (valid2, invalid2) = split_by_validity(reclassified, taxonomy);
                    dropped += invalid2.len() as u64;
                    for bad in &invalid2 {
                        log::warn!(
                            "dropping label {:?} on ({}, {}) step {}: not in taxonomy after re-ask",
                            bad.error_type,
                            task.task_id,
                            trajectory.trial_index,
                            step.index
                        );
                    }
                    valid = valid2;
                }
                Err(e) => {
                    dropped += invalid.len() as u64;
                    log::warn!(
                        "corrective re-ask failed for ({}, {}) step {}: {e}; keeping {} valid label(s), dropping {}",
                        task.task_id,
                        trajectory.trial_index,
                        step.index,
                        valid.len(),
                        invalid.len()
                    );
                }
            }
        }
        for (canonical, item) in valid {
            let duplicate = labels
                .iter()
                .any(|l| l.step_index == step.index && l.error_type == canonical);
            if duplicate {
                continue;
            }
            labels.push(ErrorLabel {
                step_index: step.index,
                error_type: canonical,
                critique: item.critique,
            });
        }
    }
    let path = ErrorPath {
        task_id: trajectory.task_id.clone(),
        trial_index: trajectory.trial_index,
        labels,
        rationale,
    };
    path.validate(taxonomy, trajectory.steps.len())?;
    Ok((path, dropped))
}

type SplitLabels = (Vec<(String, ClassifiedError)>, Vec<ClassifiedError>);

fn split_by_validity(classified: Vec<ClassifiedError>, taxonomy: &ErrorTaxonomy) -> SplitLabels {
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for item in classified {
        match normalize_error_name(&item.error_type) {
            Ok(canonical) if taxonomy.contains(&canonical) => valid.push((canonical, item)),
            _ => invalid.push(item),
        }
    }
    (valid, invalid)
}

/// Run the full stage over a pool: extend the taxonomy task by task, then
/// classify every finished trajectory, inserting the error paths into the
/// pool.
pub fn run_taxonomy_stage(
    gateway: &Gateway,
    tasks: &BTreeMap<String, TaskInstance>,
    pool: &mut TrajectoryPool,
    interleaved: bool,
    parallelism: usize,
) -> Result<TaxonomyStats> {
    let mut stats = TaxonomyStats::default();
    let task_ids = pool.task_ids();
    for task_id in &task_ids {
        if !tasks.contains_key(task_id) {
            return Err(Error::invalid(
                "taxonomy stage",
                format!("pool references unknown task {task_id}"),
            ));
        }
    }
    let mut classified: Vec<(ErrorPath, u64)> = Vec::new();
    // Extension must see tasks in ascending id order: the taxonomy grows as
    // a fold and each rationale describes the state it extended.
    for task_id in &task_ids {
        let task = &tasks[task_id];
        let mut taxonomy = std::mem::take(&mut pool.taxonomy);
        let extended = {
            let trials = pool.trials_of(task_id);
            extend_taxonomy_for_task(gateway, task, &trials, &mut taxonomy)
        };
        pool.taxonomy = taxonomy;
        if !extended? {
            stats.skipped_tasks += 1;
        }
        if interleaved {
            for trajectory in pool.trials_of(task_id) {
                if trajectory.outcome == Outcome::Aborted {
                    continue;
                }
                classified.push(classify_trajectory(
                    gateway,
                    task,
                    trajectory,
                    &pool.taxonomy,
                )?);
            }
        }
    }
    if !interleaved {
        let jobs: Vec<&Trajectory> = pool
            .trajectories()
            .filter(|t| t.outcome != Outcome::Aborted)
            .collect();
        let worker = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        let results: Vec<Result<(ErrorPath, u64)>> = worker.install(|| {
            use rayon::prelude::*;
            jobs.par_iter()
                .map(|trajectory| {
                    classify_trajectory(
                        gateway,
                        &tasks[&trajectory.task_id],
                        trajectory,
                        &pool.taxonomy,
                    )
                })
                .collect()
        });
        for result in results {
            classified.push(result?);
        }
    }
    // Insertion order does not matter (the pool keys by task and trial),
    // but keep it deterministic anyway.
    classified
        .sort_by(|a, b| (&a.0.task_id, a.0.trial_index).cmp(&(&b.0.task_id, b.0.trial_index)));
    for (path, dropped) in classified {
        stats.dropped_labels += dropped;
        pool.insert_error_path(path)?;
    }
    Ok(stats)
}
