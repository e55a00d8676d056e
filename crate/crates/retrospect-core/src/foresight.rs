//! Foresight loop for interactive settings: before executing each action
//! the agent predicts the environment's response; when the observed
//! response deviates significantly from the prediction, a mid-course
//! reflection replaces the one currently steering the episode.

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::gateway::parse::{parse_diff_output, parse_react_step};
use crate::gateway::{Gateway, PromptInputs, PromptRole};
use crate::model::{
    ForesightTurn, Outcome, Reflection, ReflectionLevel, ReflectionSource, Step, TaskInstance,
    Trajectory,
};

const REACT_REMINDER: &str = "Your previous answer could not be parsed. Answer with a line starting with \"Thought:\" followed by a line starting with \"Action:\".";
const DIFF_REMINDER: &str = "Answer with a single JSON object with keys \"significant_deviation\" (boolean) and \"reason\" (string).";

/// One interactive episode's results.
#[derive(Debug, Clone)]
pub struct ForesightOutcome {
    pub trajectory: Trajectory,
    /// Mid-course reflections in trigger order.
    pub midcourse_reflections: Vec<String>,
    /// The reflection text steering the episode when it ended: the latest
    /// mid-course reflection, or the accumulated concatenation.
    pub final_reflection: String,
    /// Diff verdicts that stayed malformed after the re-ask and were
    /// treated as "no significant deviation".
    pub diff_parse_warnings: u64,
}

impl ForesightOutcome {
    /// The reflection in force when the episode ended, if any.
    pub fn active_reflection(&self) -> Option<Reflection> {
        if self.final_reflection.is_empty() {
            return None;
        }
        Reflection::new(
            ReflectionLevel::Micro,
            self.final_reflection.clone(),
            ReflectionSource::Trial {
                task_id: self.trajectory.task_id.clone(),
                trial_index: self.trajectory.trial_index,
            },
        )
        .ok()
    }
}

/// Compare prediction and observation ignoring whitespace differences.
pub fn responses_match(predicted: &str, observed: &str) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    norm(predicted) == norm(observed)
}

/// Run one interactive episode with the foresight loop.
///
/// Each turn: act, predict the response, observe the real one. Matching
/// responses short-circuit with no model call; otherwise a structured diff
/// decides whether the deviation matters, and a significant one produces a
/// mid-course reflection that replaces the current one (or is appended to
/// it with `accumulate`).
pub fn run_interactive(
    gateway: &Gateway,
    task: &TaskInstance,
    env: &mut dyn Environment,
    max_turns: usize,
    accumulate: bool,
) -> Result<ForesightOutcome> {
    task.validate()?;
    env.reset()?;
    let mut steps: Vec<Step> = Vec::new();
    let mut turns: Vec<ForesightTurn> = Vec::new();
    let mut midcourse: Vec<String> = Vec::new();
    let mut reflection = String::new();
    let mut scratchpad = String::new();
    let mut diff_parse_warnings = 0u64;
    let mut aborted = false;
    for index in 0..max_turns {
        // Act.
        let inputs = PromptInputs::plain(crate::gateway::template::bindings([
            ("instruction", task.instruction.as_str()),
            ("reflection", reflection.as_str()),
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
                    "unparseable actor turn for ({}, interactive): {first_err}; re-asking once",
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
                    "aborting interactive episode of {} at turn {index}: {err}",
                    task.task_id
                );
                aborted = true;
                break;
            }
        };
        // Predict the environment's response before acting on it. The
        // pending thought is part of the context the predictor sees.
        let predict_inputs = PromptInputs::plain(crate::gateway::template::bindings([
            ("instruction", task.instruction.as_str()),
            ("query", task.query.as_str()),
            ("action", action.as_str()),
        ]))
        .bind("scratchpad", format!("{scratchpad}Thought: {thought}\n"))
        .truncatable("scratchpad");
        let predicted = gateway.complete(PromptRole::ForesightPredict, &predict_inputs)?;
        // Observe.
        let (observed, done) = env.step(&action)?;
        // Compare; identical responses cost no model call.
        let mut deviated = false;
        let mut reason = String::new();
        if !responses_match(&predicted, &observed) {
            let diff_inputs = PromptInputs::plain(crate::gateway::template::bindings([
                ("predicted", predicted.as_str()),
                ("observed", observed.as_str()),
            ]));
            match gateway.complete_structured(
                PromptRole::ForesightDiff,
                &diff_inputs,
                DIFF_REMINDER,
                parse_diff_output,
            ) {
                Ok(diff) => {
                    deviated = diff.significant_deviation;
                    reason = diff.reason;
                }
                Err(Error::Parse { detail, .. }) => {
                    diff_parse_warnings += 1;
                    log::warn!(
                        "diff verdict stayed malformed for ({}, turn {index}): {detail}; assuming no significant deviation",
                        task.task_id
                    );
                }
                Err(e) => return Err(e),
            }
        }
        scratchpad.push_str(&format!(
            "Thought: {thought}\nAction: {action}\nObservation: {observed}\n"
        ));
        steps.push(Step {
            index,
            thought: Some(thought),
            action: action.clone(),
            observation: observed.clone(),
        });
        let mut reflection_triggered = false;
        if deviated {
            let midcourse_inputs = PromptInputs::plain(crate::gateway::template::bindings([
                ("text", reflection.as_str()),
                ("query", task.query.as_str()),
                ("predicted", predicted.as_str()),
                ("observed", observed.as_str()),
                ("reason", reason.as_str()),
            ]))
            .bind("scratchpad", scratchpad.as_str())
            .truncatable("scratchpad");
            let text = gateway.complete(PromptRole::ReflectMidcourse, &midcourse_inputs)?;
            if accumulate && !reflection.is_empty() {
                reflection.push('\n');
                reflection.push_str(&text);
            } else {
                reflection = text.clone();
            }
            midcourse.push(text);
            reflection_triggered = true;
        }
        turns.push(ForesightTurn {
            index,
            action,
            predicted_response: predicted,
            true_response: observed,
            deviated,
            reflection_triggered,
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
                outcome = Outcome::Fail;
                final_output = String::new();
            }
        }
    }
    let trajectory = Trajectory {
        task_id: task.task_id.clone(),
        trial_index: 1,
        steps,
        final_output,
        outcome,
        foresight: turns,
    };
    trajectory.validate()?;
    Ok(ForesightOutcome {
        trajectory,
        midcourse_reflections: midcourse,
        final_reflection: reflection,
        diff_parse_warnings,
    })
}
