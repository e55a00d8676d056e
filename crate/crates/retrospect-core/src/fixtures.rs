//! Deterministic generator for the shipped toy fixtures: twelve planning
//! tasks, the scripted-backend rules that drive them through every stage,
//! and the two run configurations.
//!
//! Everything is derived from the task schedule below. The scripted actor
//! plants known violations per trial, and the classification rules are
//! generated from the oracle's own verdicts, so the mock's labels are
//! oracle-consistent by construction. Regeneration always yields the same
//! bytes; a test asserts the checked-in files match.

use std::collections::BTreeSet;
use std::path::Path;

use crate::canonical::write_json_pretty;
use crate::config::{BackendConfig, RunConfig};
use crate::envs::miniplan::{
    check_plan, scripted_plan, ErrorMode, InteractiveSpec, MiniPlanTask, ScriptedActor,
};
use crate::error::Result;
use crate::gateway::mock::{MockRule, MockScript};
use crate::gateway::PromptRole;
use crate::model::normalize_error_name;

/// Budget used by tasks that plant a budget violation; the premium-transit
/// plan totals 2064, so the first crossing lands on the last row.
const TIGHT_BUDGET: i64 = 1900;
/// Budget used by the remaining tasks; high enough that only the planted
/// non-budget violations fire.
const ROOMY_BUDGET: i64 = 2000;

/// Violation modes planted per trial, per task, in trial order. An empty
/// mode list is the clean (passing) plan. The mix covers every singleton,
/// every pair at least once, one triple, one task that passes immediately,
/// and one task that never passes.
pub fn task_schedule() -> Vec<(&'static str, i64, Vec<Vec<ErrorMode>>)> {
    use ErrorMode::*;
    vec![
        (
            "t01",
            TIGHT_BUDGET,
            vec![vec![Budget], vec![Budget], vec![]],
        ),
        (
            "t02",
            ROOMY_BUDGET,
            vec![vec![MinStay], vec![MinStay], vec![]],
        ),
        (
            "t03",
            ROOMY_BUDGET,
            vec![vec![Capacity], vec![Capacity], vec![]],
        ),
        (
            "t04",
            ROOMY_BUDGET,
            vec![vec![MealHours], vec![MealHours], vec![]],
        ),
        (
            "t05",
            TIGHT_BUDGET,
            vec![vec![Budget, MinStay], vec![Budget], vec![MinStay], vec![]],
        ),
        (
            "t06",
            TIGHT_BUDGET,
            vec![vec![Budget, Capacity], vec![Capacity], vec![]],
        ),
        (
            "t07",
            TIGHT_BUDGET,
            vec![
                vec![Budget, MealHours],
                vec![MealHours],
                vec![MealHours],
                vec![],
            ],
        ),
        (
            "t08",
            ROOMY_BUDGET,
            vec![vec![MinStay, Capacity], vec![Capacity], vec![]],
        ),
        (
            "t09",
            TIGHT_BUDGET,
            vec![
                vec![MinStay, MealHours],
                vec![MinStay],
                vec![MealHours],
                vec![Budget, MinStay, MealHours],
            ],
        ),
        (
            "t10",
            ROOMY_BUDGET,
            vec![vec![Capacity, MealHours], vec![MealHours], vec![]],
        ),
        ("t11", ROOMY_BUDGET, vec![vec![]]),
        (
            "t12",
            TIGHT_BUDGET,
            vec![vec![Budget], vec![Budget], vec![Budget], vec![]],
        ),
    ]
}

/// Tasks whose interactive episode springs the mid-conversation surprise.
pub const SURPRISE_TASKS: [&str; 6] = ["t01", "t02", "t03", "t04", "t05", "t06"];
/// The scripted user springs the surprise on this turn (1-based).
pub const SURPRISE_TURN: u32 = 3;
/// Mode planted by the injected-reflection retry of the evaluation
/// protocol, for tasks whose last trial failed.
pub const RETRY_MODES: [ErrorMode; 1] = [ErrorMode::MinStay];

/// The twelve task fixtures, validated.
pub fn build_tasks() -> Result<Vec<MiniPlanTask>> {
    let mut tasks = Vec::new();
    for (id, budget, _) in task_schedule() {
        let mut task = MiniPlanTask::example(id, budget);
        if SURPRISE_TASKS.contains(&id) {
            task.interactive = Some(InteractiveSpec {
                surprise_turn: Some(SURPRISE_TURN),
            });
        }
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

fn trip_marker(task_id: &str) -> String {
    format!("[trip {task_id}]")
}

fn rule(role: PromptRole, matches: String, response: String) -> MockRule {
    MockRule {
        role,
        r#match: matches,
        response,
    }
}

fn mode_set(modes: &[ErrorMode]) -> BTreeSet<ErrorMode> {
    modes.iter().copied().collect()
}

fn mode_advice(mode: ErrorMode) -> &'static str {
    match mode {
        ErrorMode::Budget => {
            "Total the whole trip before choosing transit and drop premium options."
        }
        ErrorMode::MinStay => "Respect each lodging's minimum stay when switching lodgings.",
        ErrorMode::Capacity => "Pick lodgings that fit the whole party.",
        ErrorMode::MealHours => "Book dinner inside the restaurant's opening hours.",
    }
}

/// "Thought: ...\nAction: ..." actor responses for one planted trial.
/// `tag` is the per-step marker prefix, e.g. "t05.k2" or "t09.retry".
fn actor_responses(task: &MiniPlanTask, modes: &[ErrorMode], tag: &str) -> Result<Vec<String>> {
    let mut actor = ScriptedActor::new(task, &mode_set(modes))?;
    let mut responses = Vec::new();
    let mut step = 0usize;
    while let Some(action) = actor.next_action() {
        let narration = if action == "submit_plan" {
            "All rows are recorded; submit the plan.".to_string()
        } else {
            format!("Record day {} of the draft plan.", step + 1)
        };
        responses.push(format!(
            "Thought: [{tag}.s{step}] {narration}\nAction: {action}"
        ));
        step += 1;
    }
    Ok(responses)
}

/// Actor rules for one scripted trial, most-specific first: step markers
/// descending, then `step0_key` (the marker that identifies the trial's
/// first prompt: a reflection marker, or the query marker for trial 1).
fn push_actor_rules(rules: &mut Vec<MockRule>, responses: &[String], tag: &str, step0_key: String) {
    for step in (1..responses.len()).rev() {
        rules.push(rule(
            PromptRole::ActorReact,
            format!("[{tag}.s{}]", step - 1),
            responses[step].clone(),
        ));
    }
    rules.push(rule(
        PromptRole::ActorReact,
        step0_key,
        responses[0].clone(),
    ));
}

/// Classification rules for one trajectory, derived from the oracle verdict
/// of its plan: each step that carries violations gets a rule keyed on its
/// thought marker; violation-free steps fall through to the shared
/// empty-array rule appended at the end of the role block.
fn push_classify_rules(
    rules: &mut Vec<MockRule>,
    task: &MiniPlanTask,
    modes: &[ErrorMode],
    tag: &str,
) -> Result<()> {
    let plan = scripted_plan(task, &mode_set(modes))?;
    let verdict = check_plan(task, &plan);
    let rows = plan.lines().count();
    for step in 0..rows {
        let elements: Vec<String> = verdict
            .violations
            .iter()
            .filter(|v| v.step_index == step)
            .map(|v| {
                format!(
                    r#"{{"error_type": "{}", "critique": "[c:{tag}.s{step}] {}"}}"#,
                    v.constraint, v.detail
                )
            })
            .collect();
        if elements.is_empty() {
            continue;
        }
        rules.push(rule(
            PromptRole::ErrorClassify,
            format!("Current Step:\nThought: [{tag}.s{step}]"),
            format!("[{}]", elements.join(", ")),
        ));
    }
    Ok(())
}

/// Taxonomy-extension response per task: the first four tasks introduce the
/// four error types; later tasks return only already-known names, several
/// as case, punctuation, or spacing variants to exercise normalization.
fn taxonomy_response(task_id: &str) -> String {
    let (names, rationale): (Vec<&str>, &str) = match task_id {
        "t01" => (
            vec!["Budget Constraint Violation"],
            "Both failed trials overspent on premium transit; a budget category captures them.",
        ),
        "t02" => (
            vec!["Accommodation Minimum Stay Violation"],
            "The failures booked a single night where the lodging requires two; add a minimum-stay category.",
        ),
        "t03" => (
            vec!["Accommodation Capacity Violation"],
            "The failures booked a lodging smaller than the party; add a capacity category.",
        ),
        "t04" => (
            vec!["Restaurant Timing Error"],
            "The failures booked dinner outside opening hours; add a timing category.",
        ),
        "t05" => (
            vec!["BUDGET CONSTRAINT VIOLATION", "Accommodation Minimum Stay Violation"],
            "Both failure kinds are already covered; no new type is needed.",
        ),
        "t06" => (
            vec!["Budget Constraint Violation.", "Accommodation Capacity Violation"],
            "Overspending and an over-capacity lodging; both types already exist.",
        ),
        "t07" => (
            vec!["Restaurant   Timing Error", "Budget Constraint Violation"],
            "Late dinners plus overspending; the existing taxonomy covers both.",
        ),
        "t08" => (
            vec!["accommodation capacity violation", "Accommodation Minimum Stay Violation"],
            "Capacity and minimum-stay breaks; both types already exist.",
        ),
        "t09" => (
            vec!["Accommodation Minimum Stay Violation", "Restaurant Timing Error"],
            "Recurring stay-length and dinner-time mistakes; covered by existing types.",
        ),
        "t10" => (
            vec!["Accommodation Capacity Violation", "Restaurant Timing Error"],
            "An over-capacity lodging and a late dinner; covered by existing types.",
        ),
        "t11" => (
            vec!["Budget Constraint Violation"],
            "The first trial already passed; the existing taxonomy needs no extension.",
        ),
        "t12" => (
            vec!["Budget Constraint Violation"],
            "Three budget overruns in a row; the budget type covers them.",
        ),
        other => panic!("no taxonomy response scripted for {other}"),
    };
    let quoted: Vec<String> = names.iter().map(|n| format!("{n:?}")).collect();
    format!(
        r#"{{"error_taxonomy": [{}], "rationale": "[z:{task_id}] {rationale}"}}"#,
        quoted.join(", ")
    )
}

fn micro_reflection_response(task_id: &str, trial: u32, modes: &[ErrorMode]) -> String {
    let names: Vec<&str> = modes.iter().map(|m| m.constraint()).collect();
    let advice: Vec<&str> = modes.iter().map(|m| mode_advice(*m)).collect();
    format!(
        "[r:{task_id}.k{trial}] Trial {trial} failed with: {}. {}",
        names.join(", "),
        advice.join(" ")
    )
}

fn merge_response(task_id: &str, trial: u32, modes: &[ErrorMode]) -> String {
    let advice: Vec<&str> = modes.iter().map(|m| mode_advice(*m)).collect();
    format!(
        "[final:{task_id}.k{trial}] Keep the reference choices: Cedar Lodge every night, dinner at Harbor Grill between 18 and 22, City Bus transit. {}",
        advice.join(" ")
    )
}

fn error_type_response(display_name: &str) -> String {
    let canonical = normalize_error_name(display_name).expect("scripted names normalize");
    let diagnosis = match canonical.as_str() {
        "budget constraint violation" => {
            "Across tasks the failures picked premium transit without totalling the trip. Compute the full cost of every row before committing and choose the cheapest transit that satisfies the query."
        }
        "accommodation minimum stay violation" => {
            "Across tasks the failures split stays below the lodging's minimum nights. Check the minimum-stay column before switching lodgings and keep one lodging when in doubt."
        }
        "accommodation capacity violation" => {
            "Across tasks the failures booked lodgings smaller than the party. Compare the party size against the capacity column before booking."
        }
        "restaurant timing error" => {
            "Across tasks the failures booked dinner outside opening hours. Read the opening hours and pick an hour strictly inside them."
        }
        other => panic!("no error-type response scripted for {other}"),
    };
    format!("[etype:{canonical}] {diagnosis}")
}

/// The scripted backend for the batch pipeline: actor steps, micro
/// reflections, taxonomy extension, per-step classification, error-type
/// reflections, merges, and the evaluation retry. Strict: any prompt that
/// matches no rule fails the run loudly.
pub fn synthesize_script() -> Result<MockScript> {
    let mut actor: Vec<MockRule> = Vec::new();
    let mut reflect: Vec<MockRule> = Vec::new();
    let mut taxonomy: Vec<MockRule> = Vec::new();
    let mut classify: Vec<MockRule> = Vec::new();
    let mut merge: Vec<MockRule> = Vec::new();

    for (id, budget, trials) in task_schedule() {
        let task = MiniPlanTask::example(id, budget);
        let last_failed = !trials.last().expect("at least one trial").is_empty();

        // Evaluation-retry rules come first: their prompts also contain the
        // query marker, so they must shadow the trial-1 fallback.
        if last_failed {
            let tag = format!("{id}.retry");
            let responses = actor_responses(&task, &RETRY_MODES, &tag)?;
            let final_marker = format!("[final:{id}.k{}]", trials.len());
            push_actor_rules(&mut actor, &responses, &tag, final_marker);
            push_classify_rules(&mut classify, &task, &RETRY_MODES, &tag)?;
        }

        // Trials descending, steps descending; the trial-1 fallback keyed on
        // the query marker goes last.
        for (index, modes) in trials.iter().enumerate().rev() {
            let trial = index as u32 + 1;
            let tag = format!("{id}.k{trial}");
            let responses = actor_responses(&task, modes, &tag)?;
            let step0_key = if trial == 1 {
                trip_marker(id)
            } else {
                format!("[r:{id}.k{}]", trial - 1)
            };
            push_actor_rules(&mut actor, &responses, &tag, step0_key);
            if !modes.is_empty() {
                reflect.push(rule(
                    PromptRole::ReflectSingle,
                    format!("[{tag}.s0]"),
                    micro_reflection_response(id, trial, modes),
                ));
                merge.push(rule(
                    PromptRole::MergeSummarize,
                    format!("[r:{tag}]"),
                    merge_response(id, trial, modes),
                ));
                push_classify_rules(&mut classify, &task, modes, &tag)?;
            }
        }

        taxonomy.push(rule(
            PromptRole::TaxonomyExtend,
            trip_marker(id),
            taxonomy_response(id),
        ));
    }

    // Violation-free steps (and passing trials) classify as an empty array.
    classify.push(rule(
        PromptRole::ErrorClassify,
        "Current Step:".to_string(),
        "[]".to_string(),
    ));

    let error_types: Vec<MockRule> = [
        "Budget Constraint Violation",
        "Accommodation Minimum Stay Violation",
        "Accommodation Capacity Violation",
        "Restaurant Timing Error",
    ]
    .iter()
    .map(|display| {
        rule(
            PromptRole::ReflectErrorType,
            format!("Error Type: {display}"),
            error_type_response(display),
        )
    })
    .collect();

    let mut rules = actor;
    rules.extend(reflect);
    rules.extend(taxonomy);
    rules.extend(classify);
    rules.extend(error_types);
    rules.extend(merge);
    Ok(MockScript {
        strict: true,
        rules,
    })
}

/// The seven-turn interactive episode of one task:
/// (thought narration, action, environment response when no surprise fires).
fn interactive_turns(task: &MiniPlanTask) -> Vec<(String, String, String)> {
    let mut turns = vec![
        (
            "Ask for the total budget first.".to_string(),
            "ask budget".to_string(),
            format!("The total budget is {}.", task.budget),
        ),
        (
            "Ask how many people are travelling.".to_string(),
            "ask party".to_string(),
            format!("The party size is {}.", task.party_size),
        ),
        (
            "Ask about special preferences before planning.".to_string(),
            "ask preferences".to_string(),
            "No special preferences.".to_string(),
        ),
    ];
    for (i, row) in task.reference_plan.lines().enumerate() {
        let day = i + 1;
        turns.push((
            format!("Record day {day} for the agreed constraints."),
            format!("plan day {day}: {row}"),
            format!("Recorded day {day}."),
        ));
    }
    turns.push((
        "Everything is recorded; submit the plan.".to_string(),
        "submit_plan".to_string(),
        "Your plan is valid: all constraints are satisfied.".to_string(),
    ));
    turns
}

/// The scripted backend for the interactive loop: per-turn actor steps and
/// response predictions, one shared deviation verdict, and a mid-course
/// reflection per surprise task. Predictions equal the environment's
/// responses everywhere except the surprise turn, so the deviation check
/// short-circuits on every other turn.
pub fn interactive_script() -> Result<MockScript> {
    let mut actor: Vec<MockRule> = Vec::new();
    let mut predict: Vec<MockRule> = Vec::new();
    let mut midcourse: Vec<MockRule> = Vec::new();

    for task in build_tasks()? {
        let id = task.task_id.clone();
        let turns = interactive_turns(&task);
        // Turn T's actor prompt carries the turn-(T-1) thought marker in its
        // scratchpad; turn 1 falls back to the query marker.
        for turn in (2..=turns.len()).rev() {
            let (narration, action, _) = &turns[turn - 1];
            actor.push(rule(
                PromptRole::ActorReact,
                format!("[i:{id}.u{}]", turn - 1),
                format!("Thought: [i:{id}.u{turn}] {narration}\nAction: {action}"),
            ));
        }
        let (narration, action, _) = &turns[0];
        actor.push(rule(
            PromptRole::ActorReact,
            trip_marker(&id),
            format!("Thought: [i:{id}.u1] {narration}\nAction: {action}"),
        ));
        // The predictor prompt carries the current turn's thought marker.
        for turn in (1..=turns.len()).rev() {
            let (_, _, response) = &turns[turn - 1];
            predict.push(rule(
                PromptRole::ForesightPredict,
                format!("[i:{id}.u{turn}]"),
                response.clone(),
            ));
        }
        if SURPRISE_TASKS.contains(&id.as_str()) {
            midcourse.push(rule(
                PromptRole::ReflectMidcourse,
                trip_marker(&id),
                format!(
                    "[mc:{id}.u{SURPRISE_TURN}] The party grew by one person mid-conversation. Recheck lodging capacity and the total cost for the larger group, then record the plan for everyone."
                ),
            ));
        }
    }

    let diff = rule(
        PromptRole::ForesightDiff,
        "one more person just joined".to_string(),
        r#"{"significant_deviation": true, "reason": "The party size changed, so lodging capacity and the trip total must be replanned."}"#
            .to_string(),
    );

    let mut rules = actor;
    rules.extend(predict);
    rules.push(diff);
    rules.extend(midcourse);
    Ok(MockScript {
        strict: true,
        rules,
    })
}

/// The batch-run configuration (all defaults).
pub fn toy_config() -> RunConfig {
    RunConfig::default()
}

/// The interactive-run configuration: the interactive script and its own
/// run directory; everything else default.
pub fn toy_interactive_config() -> RunConfig {
    RunConfig {
        backend: BackendConfig::Mock {
            script: "fixtures/mock/interactive.json".into(),
        },
        run_dir: "runs/toy_interactive".into(),
        ..RunConfig::default()
    }
}

/// Write every fixture and config under `root`, creating directories.
pub fn write_all(root: &Path) -> Result<()> {
    let miniplan = root.join("fixtures/miniplan");
    let mock = root.join("fixtures/mock");
    let configs = root.join("configs");
    for dir in [&miniplan, &mock, &configs] {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    }
    for task in build_tasks()? {
        write_json_pretty(&miniplan.join(format!("{}.json", task.task_id)), &task)?;
    }
    write_json_pretty(&mock.join("synthesize.json"), &synthesize_script()?)?;
    write_json_pretty(&mock.join("interactive.json"), &interactive_script()?)?;
    write_json_pretty(&configs.join("toy.json"), &toy_config())?;
    write_json_pretty(
        &configs.join("toy_interactive.json"),
        &toy_interactive_config(),
    )?;
    Ok(())
}
