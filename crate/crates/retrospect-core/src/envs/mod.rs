//! Task environments: the deterministic miniplan toy family and a generic
//! adapter that delegates judging to an external checker command.

pub mod adapter;
pub mod miniplan;

use crate::error::{Error, Result};
use crate::model::{Outcome, Trajectory};

/// A turn-wise environment instance. Instances are single-use: `reset`
/// starts the episode, `step` advances it, and after the episode ends the
/// final output (if any) is available for judging.
pub trait Environment {
    /// Start the episode and return the initial observation.
    fn reset(&mut self) -> Result<String>;

    /// Execute one action; returns (response text, done).
    fn step(&mut self, action: &str) -> Result<(String, bool)>;

    /// The submitted final output, once the episode produced one.
    fn final_output(&self) -> Option<String>;

    /// Deterministic verdict for a final output.
    fn judge(&self, final_output: &str) -> Result<bool>;
}

/// Deterministic pass/fail verdict for a finished trajectory.
pub fn judge_outcome(trajectory: &Trajectory, env: &dyn Environment) -> Result<Outcome> {
    if trajectory.final_output.trim().is_empty() {
        return Err(Error::invalid(
            "trajectory",
            format!(
                "({}, {}) has no final_output to judge",
                trajectory.task_id, trajectory.trial_index
            ),
        ));
    }
    Ok(if env.judge(&trajectory.final_output)? {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}

#[cfg(test)]
mod tests {
    use super::miniplan::{MiniPlanEnv, MiniPlanTask};
    use super::*;
    use crate::model::Step;

    fn trajectory(task: &MiniPlanTask, final_output: &str) -> Trajectory {
        Trajectory {
            task_id: task.task_id.clone(),
            trial_index: 1,
            steps: vec![Step {
                index: 0,
                thought: None,
                action: "submit_plan".into(),
                observation: "done".into(),
            }],
            final_output: final_output.into(),
            outcome: Outcome::Fail,
            foresight: vec![],
        }
    }

    #[test]
    fn judge_outcome_uses_the_oracle() {
        let task = MiniPlanTask::example("t77", 1900);
        let env = MiniPlanEnv::new(task.clone()).unwrap();
        let pass = judge_outcome(&trajectory(&task, &task.reference_plan), &env).unwrap();
        assert_eq!(pass, Outcome::Pass);
        let fail = judge_outcome(&trajectory(&task, "garbage plan"), &env).unwrap();
        assert_eq!(fail, Outcome::Fail);
    }

    #[test]
    fn missing_final_output_is_an_error() {
        let task = MiniPlanTask::example("t77", 1900);
        let env = MiniPlanEnv::new(task.clone()).unwrap();
        let err = judge_outcome(&trajectory(&task, "  "), &env).unwrap_err();
        assert!(err.to_string().contains("no final_output"), "{err}");
    }
}
