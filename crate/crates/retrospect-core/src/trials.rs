//! Retry loop: run a task up to K trials, reflecting after each failure and
//! injecting only the most recent reflection into the next attempt.

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::gateway::parse::parse_react_step;
use crate::gateway::{Gateway, PromptInputs, PromptRole};
use crate::model::{
    Outcome, Reflection, ReflectionLevel, ReflectionSource, Step, TaskInstance, Trajectory,
};

/// Appended to the actor prompt when its first answer cannot be parsed.
const REACT_REMINDER: &str = "Your previous answer could not be parsed. Answer with a line starting with \"Thought:\" followed by a line starting with \"Action:\".";

/// Shown in place of a reference plan when a task does not carry one.
const NO_REFERENCE: &str = "(none provided)";

/// Everything one retry loop produced for one task.
#[derive(Debug, Clone)]
pub struct RetryLoopOutput {
    /// Trials in order; trial k+1 exists only if trial k failed, unless
    /// `exhaust_trials` forced the full budget.
    pub trajectories: Vec<Trajectory>,
    /// One reflection per failed trial.
    pub reflections: Vec<Reflection>,
}

/// Run the retry loop for one task.
///
/// * A fresh environment is created per trial.
/// * Only the reflection of the immediately preceding trial is injected;
///   when the prior trial passed (possible with `exhaust_trials`) or was
///   aborted, the actor sees an empty reflection slot.
/// * A trial whose actor output cannot be parsed even after one re-ask is
///   recorded as aborted: it gets no reflection and, without
///   `exhaust_trials`, ends the loop (aborted is not failed).
pub fn run_retry_loop(
    gateway: &Gateway,
    task: &TaskInstance,
    make_env: &mut dyn FnMut() -> Result<Box<dyn Environment>>,
    trials: u32,
    max_steps: usize,
    exhaust_trials: bool,
) -> Result<RetryLoopOutput> {
    task.validate()?;
    if trials == 0 {
        return Err(Error::Config("trial budget must be >= 1".into()));
    }
    let mut out = RetryLoopOutput {
        trajectories: Vec::new(),
        reflections: Vec::new(),
    };
    let mut prior_reflection = String::new();
    for trial_index in 1..=trials {
        let mut env = make_env()?;
        let trajectory = run_trial(
            gateway,
            task,
            env.as_mut(),
            trial_index,
            &prior_reflection,
            max_steps,
        )?;
        let outcome = trajectory.outcome;
        out.trajectories.push(trajectory);
        prior_reflection.clear();
        if outcome.is_fail() {
            let text =
                reflect_on_trial(gateway, task, out.trajectories.last().expect("just pushed"))?;
            prior_reflection = text.clone();
            out.reflections.push(Reflection::new(
                ReflectionLevel::Micro,
                text,
                ReflectionSource::Trial {
                    task_id: task.task_id.clone(),
                    trial_index,
                },
            )?);
        }
        if outcome != Outcome::Fail && !exhaust_trials {
            break;
        }
    }
    Ok(out)
}

/// Run one trial to completion, abort, or step exhaustion.
pub fn run_trial(
    gateway: &Gateway,
    task: &TaskInstance,
    env: &mut dyn Environment,
    trial_index: u32,
    injected_reflection: &str,
    max_steps: usize,
) -> Result<Trajectory> {
    env.reset()?;
    let mut steps: Vec<Step> = Vec::new();
    let mut scratchpad = String::new();
    let mut aborted = false;
    for index in 0..max_steps {
        let inputs = PromptInputs::plain(crate::gateway::template::bindings([
            ("instruction", task.instruction.as_str()),
            ("reflection", injected_reflection),
            ("background", task.background.as_str()),
            ("query", task.query.as_str()),
            ("scratchpad", scratchpad.as_str()),
        ]))
        .truncatable("background");
        let prompt = gateway.render(PromptRole::ActorReact, &inputs)?;
        let completion = gateway.complete_prompt(PromptRole::ActorReact, &prompt)?;
        let parsed = match parse_react_step(&completion) {
            Ok(step) => Ok(step),
            Err(first_err) => {
                log::warn!(
                    "unparseable actor step for ({}, {trial_index}): {first_err}; re-asking once",
                    task.task_id
                );
                let retry_prompt = format!("{prompt}\n\n{REACT_REMINDER}");
                gateway
                    .complete_prompt(PromptRole::ActorReact, &retry_prompt)
                    .and_then(|text| parse_react_step(&text))
            }
        };
        let (thought, action) = match parsed {
            Ok(pair) => pair,
            Err(err) => {
                log::warn!(
                    "aborting trial ({}, {trial_index}) at step {index}: {err}",
                    task.task_id
                );
                aborted = true;
                break;
            }
        };
        let (observation, done) = env.step(&action)?;
        scratchpad.push_str(&format!(
            "Thought: {thought}\nAction: {action}\nObservation: {observation}\n"
        ));
        steps.push(Step {
            index,
            thought: Some(thought),
            action,
            observation,
        });
        if done {
            break;
        }
    }
    let outcome;
    let final_output;
    if aborted {
        outcome = Outcome::Aborted;
        final_output = String::new();
    } else {
        match env.final_output() {
            Some(output) => {
                outcome = if env.judge(&output)? {
                    Outcome::Pass
                } else {
                    Outcome::Fail
                };
                final_output = output;
            }
            None => {
                // Ran out of steps without submitting anything.
                outcome = Outcome::Fail;
                final_output = String::new();
            }
        }
    }
    let trajectory = Trajectory {
        task_id: task.task_id.clone(),
        trial_index,
        steps,
        final_output,
        outcome,
        foresight: Vec::new(),
    };
    trajectory.validate()?;
    Ok(trajectory)
}

/// Produce the trial-level reflection for one failed trajectory.
///
/// The reference plan appears in the prompt only when the active reference
/// policy includes it at this level.
pub fn reflect_on_trial(
    gateway: &Gateway,
    task: &TaskInstance,
    trajectory: &Trajectory,
) -> Result<String> {
    let mut inputs = PromptInputs::plain(crate::gateway::template::bindings([
        ("text", task.background.as_str()),
        ("query", task.query.as_str()),
    ]))
    .bind("scratchpad", trajectory.transcript())
    .truncatable("text");
    if gateway.templates().policy().reference_in_single() {
        inputs = inputs.bind(
            "annotated_plan",
            task.reference.as_deref().unwrap_or(NO_REFERENCE),
        );
    }
    gateway.complete(PromptRole::ReflectSingle, &inputs)
}
