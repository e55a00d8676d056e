//! Cross-task synthesis: cluster error paths by error type, reflect once
//! per error type over sampled members, and merge each failed trajectory's
//! materials into one final reflection with a manifest of what went in.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, PromptInputs, PromptRole};
use crate::model::{
    MergeManifest, Outcome, Reflection, ReflectionLevel, ReflectionSource, TaskInstance,
};
use crate::pool::TrajectoryPool;
use crate::taxonomy::rationale_for;

/// Most cluster members quoted in one error-type reflection prompt; larger
/// clusters are sampled evenly across their span.
pub const CLUSTER_MEMBER_CAP: usize = 20;

const NO_MICRO: &str = "(none)";
const NO_RATIONALE: &str = "(none)";
const NO_TYPE_REFLECTIONS: &str = "(none)";

/// All trajectories whose error path mentions one error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorCluster {
    pub canonical_name: String,
    /// (task_id, trial_index), ascending.
    pub members: Vec<(String, u32)>,
}

/// Group the pool's error paths by error type. Clusters come back sorted by
/// canonical name; types no path mentions yield no cluster.
pub fn group_by_error(pool: &TrajectoryPool) -> Vec<ErrorCluster> {
    let mut clusters: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    for path in pool.error_paths() {
        for name in path.error_types() {
            clusters
                .entry(name)
                .or_default()
                .push((path.task_id.clone(), path.trial_index));
        }
    }
    clusters
        .into_iter()
        .map(|(canonical_name, mut members)| {
            members.sort();
            ErrorCluster {
                canonical_name,
                members,
            }
        })
        .collect()
}

/// Pick at most `cap` members spread evenly across the cluster.
pub fn sample_members<T>(members: &[T], cap: usize) -> Vec<&T> {
    if members.len() <= cap {
        return members.iter().collect();
    }
    (0..cap)
        .map(|i| &members[i * members.len() / cap])
        .collect()
}

/// One block per sampled member: the labeled actions and critiques for this
/// error type, in step order.
fn member_block(
    pool: &TrajectoryPool,
    canonical_name: &str,
    member: &(String, u32),
) -> Result<String> {
    let (task_id, trial_index) = member;
    let path = pool.error_path(task_id, *trial_index).ok_or_else(|| {
        Error::invalid(
            "cluster",
            format!("missing error path ({task_id}, {trial_index})"),
        )
    })?;
    let trajectory = pool.trajectory(task_id, *trial_index).ok_or_else(|| {
        Error::invalid(
            "cluster",
            format!("missing trajectory ({task_id}, {trial_index})"),
        )
    })?;
    let mut lines = vec![format!("Task {task_id}, trial {trial_index}:")];
    for label in &path.labels {
        if label.error_type != canonical_name {
            continue;
        }
        let action = trajectory
            .steps
            .get(label.step_index)
            .map(|s| s.action.as_str())
            .unwrap_or("(unknown)");
        lines.push(format!("Action: {action}"));
        lines.push(format!("Critique: {}", label.critique));
    }
    Ok(lines.join("\n"))
}

/// Produce one reflection per error cluster.
pub fn reflect_error_types(gateway: &Gateway, pool: &TrajectoryPool) -> Result<Vec<Reflection>> {
    let mut reflections = Vec::new();
    for cluster in group_by_error(pool) {
        let display = pool
            .taxonomy
            .display_name(&cluster.canonical_name)
            .ok_or_else(|| {
                Error::invalid(
                    "cluster",
                    format!(
                        "error type {:?} missing from taxonomy",
                        cluster.canonical_name
                    ),
                )
            })?
            .to_string();
        let blocks: Result<Vec<String>> = sample_members(&cluster.members, CLUSTER_MEMBER_CAP)
            .into_iter()
            .map(|member| member_block(pool, &cluster.canonical_name, member))
            .collect();
        let inputs = PromptInputs::plain(crate::gateway::template::bindings([(
            "error_type",
            display.as_str(),
        )]))
        .repeated("error_trajectories", blocks?);
        let text = gateway.complete(PromptRole::ReflectErrorType, &inputs)?;
        reflections.push(Reflection::new(
            ReflectionLevel::ErrorType,
            text,
            ReflectionSource::ErrorType {
                name: cluster.canonical_name.clone(),
            },
        )?);
    }
    Ok(reflections)
}

/// Merge the micro reflection, taxonomy rationale, and error-type
/// reflections of one failed trajectory into a final reflection.
pub fn merge_trajectory(
    gateway: &Gateway,
    task: &TaskInstance,
    pool: &TrajectoryPool,
    trial_index: u32,
) -> Result<Reflection> {
    let task_id = &task.task_id;
    let micro = pool.micro_reflection(task_id, trial_index);
    let rationale = rationale_for(&pool.taxonomy, task_id);
    let types = pool
        .error_path(task_id, trial_index)
        .map(|p| p.error_types())
        .unwrap_or_default();
    // Only types with a synthesized reflection become merge inputs.
    let applicable: Vec<(&str, &Reflection)> = types
        .iter()
        .filter_map(|name| pool.error_type_reflection(name).map(|r| (name.as_str(), r)))
        .collect();
    if micro.is_none() && applicable.is_empty() {
        return Err(Error::stage(
            "macro-merge",
            format!("nothing to merge for ({task_id}, {trial_index}): no trial reflection and no error-type reflections"),
        ));
    }
    let blocks: Vec<String> = applicable
        .iter()
        .map(|(name, r)| {
            let display = pool.taxonomy.display_name(name).unwrap_or(name);
            format!("Error type {display}:\n{}", r.text)
        })
        .collect();
    let mut inputs = PromptInputs::plain(crate::gateway::template::bindings([
        ("query", task.query.as_str()),
        (
            "micro_reflection",
            micro.map(|r| r.text.as_str()).unwrap_or(NO_MICRO),
        ),
        ("rationale", rationale.unwrap_or(NO_RATIONALE)),
    ]));
    if blocks.is_empty() {
        inputs = inputs.bind("error_type_reflections", NO_TYPE_REFLECTIONS);
    } else {
        inputs = inputs.repeated("error_type_reflections", blocks);
    }
    let text = gateway.complete(PromptRole::MergeSummarize, &inputs)?;
    let manifest = MergeManifest {
        micro: micro.map(|_| format!("{task_id}#{trial_index}")),
        rationale_task: rationale.map(|_| task_id.clone()),
        error_types: applicable
            .iter()
            .map(|(name, _)| name.to_string())
            .collect(),
    };
    Reflection::new(
        ReflectionLevel::Final,
        text,
        ReflectionSource::Trial {
            task_id: task_id.clone(),
            trial_index,
        },
    )?
    .with_manifest(manifest)
}

/// Merge every failed trajectory in the pool, in (task, trial) order.
pub fn merge_all(
    gateway: &Gateway,
    tasks: &BTreeMap<String, TaskInstance>,
    pool: &TrajectoryPool,
) -> Result<Vec<Reflection>> {
    let mut reflections = Vec::new();
    for trajectory in pool.trajectories() {
        if trajectory.outcome != Outcome::Fail {
            continue;
        }
        let task = tasks.get(&trajectory.task_id).ok_or_else(|| {
            Error::invalid(
                "macro-merge",
                format!("pool references unknown task {}", trajectory.task_id),
            )
        })?;
        reflections.push(merge_trajectory(
            gateway,
            task,
            pool,
            trajectory.trial_index,
        )?);
    }
    Ok(reflections)
}
