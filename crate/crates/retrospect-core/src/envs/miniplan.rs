//! The miniplan toy family: integer-cost constrained trip planning with a
//! ground-truth constraint oracle, a scripted plan writer that plants
//! chosen violations, and batch plus interactive environment variants.
//!
//! Constraint names double as taxonomy display names, so oracle labels and
//! model labels live in the same namespace.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::model::TaskInstance;

pub const BUDGET_VIOLATION: &str = "Budget Constraint Violation";
pub const MIN_STAY_VIOLATION: &str = "Accommodation Minimum Stay Violation";
pub const CAPACITY_VIOLATION: &str = "Accommodation Capacity Violation";
pub const MEAL_HOURS_VIOLATION: &str = "Restaurant Timing Error";
pub const FORMAT_VIOLATION: &str = "Plan Format Error";

/// The four plantable constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    Budget,
    MinStay,
    Capacity,
    MealHours,
}

impl ErrorMode {
    pub const ALL: [ErrorMode; 4] = [
        ErrorMode::Budget,
        ErrorMode::MinStay,
        ErrorMode::Capacity,
        ErrorMode::MealHours,
    ];

    /// The oracle constraint name this mode plants.
    pub fn constraint(self) -> &'static str {
        match self {
            ErrorMode::Budget => BUDGET_VIOLATION,
            ErrorMode::MinStay => MIN_STAY_VIOLATION,
            ErrorMode::Capacity => CAPACITY_VIOLATION,
            ErrorMode::MealHours => MEAL_HOURS_VIOLATION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Lodging {
    pub name: String,
    pub price_per_night: i64,
    pub min_nights: u32,
    pub capacity: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Meal {
    pub name: String,
    pub price_per_person: i64,
    pub open_hour: u32,
    pub close_hour: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Transit {
    pub name: String,
    pub price_per_day: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Catalog {
    pub lodgings: Vec<Lodging>,
    pub meals: Vec<Meal>,
    pub transits: Vec<Transit>,
}

/// Interactive-variant knobs: which turn (1-based) springs the surprise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InteractiveSpec {
    #[serde(default)]
    pub surprise_turn: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MiniPlanTask {
    pub task_id: String,
    pub budget: i64,
    pub days: u32,
    pub party_size: u32,
    pub catalog: Catalog,
    pub reference_plan: String,
    #[serde(default)]
    pub interactive: Option<InteractiveSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Violation {
    pub constraint: String,
    pub step_index: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct OracleVerdict {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl OracleVerdict {
    fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| {
            (a.step_index, &a.constraint, &a.detail).cmp(&(b.step_index, &b.constraint, &b.detail))
        });
        OracleVerdict {
            pass: violations.is_empty(),
            violations,
        }
    }

    /// Distinct constraint names, ascending.
    pub fn constraint_names(&self) -> BTreeSet<String> {
        self.violations
            .iter()
            .map(|v| v.constraint.clone())
            .collect()
    }

    /// One-line text embedded in environment responses.
    pub fn summary(&self) -> String {
        if self.pass {
            return "Your plan is valid: all constraints are satisfied.".to_string();
        }
        let items: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{} at step {} ({})", v.constraint, v.step_index, v.detail))
            .collect();
        format!("Your plan is invalid. Violations: {}.", items.join("; "))
    }
}

/// One parsed plan row.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PlanRow {
    day: u32,
    lodging: String,
    meal: String,
    hour: u32,
    transit: String,
}

impl MiniPlanTask {
    pub fn load(path: &Path) -> Result<Self> {
        let task: MiniPlanTask = crate::canonical::read_json(path)?;
        task.validate()?;
        Ok(task)
    }

    /// Load-time invariants: well-formed bounds, non-empty catalog, a
    /// reference plan the oracle accepts, and a catalog that admits at
    /// least two distinct failing plans (probed with planted modes).
    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(Error::invalid("task", "task_id is empty"));
        }
        if self.days < 1 {
            return Err(Error::invalid("task", "days must be >= 1"));
        }
        if self.party_size < 1 {
            return Err(Error::invalid("task", "party_size must be >= 1"));
        }
        if self.catalog.lodgings.is_empty()
            || self.catalog.meals.is_empty()
            || self.catalog.transits.is_empty()
        {
            return Err(Error::invalid(
                "task",
                format!(
                    "{}: catalog must offer lodgings, meals, and transits",
                    self.task_id
                ),
            ));
        }
        for meal in &self.catalog.meals {
            if meal.open_hour > 23 || meal.close_hour > 23 || meal.open_hour > meal.close_hour {
                return Err(Error::invalid(
                    "task",
                    format!("{}: meal {} has bad hours", self.task_id, meal.name),
                ));
            }
        }
        let reference = check_plan(self, &self.reference_plan);
        if !reference.pass {
            return Err(Error::invalid(
                "task",
                format!(
                    "{}: reference_plan fails its own oracle: {}",
                    self.task_id,
                    reference.summary()
                ),
            ));
        }
        // The catalog must admit at least two distinct failing plans; probe
        // with the plantable singleton modes (a task need not support all).
        let mut failing_plans = BTreeSet::new();
        for mode in ErrorMode::ALL {
            if let Ok(plan) = scripted_plan(self, &BTreeSet::from([mode])) {
                failing_plans.insert(plan);
            }
        }
        if failing_plans.len() < 2 {
            return Err(Error::invalid(
                "task",
                format!(
                    "{}: catalog admits fewer than 2 distinct failing plans",
                    self.task_id
                ),
            ));
        }
        Ok(())
    }

    /// The training-instance view of this task.
    pub fn instance(&self) -> TaskInstance {
        TaskInstance {
            task_id: self.task_id.clone(),
            instruction: INSTRUCTION.to_string(),
            query: format!(
                "Plan a {}-day trip for {} people with a total budget of {}. [trip {}]",
                self.days, self.party_size, self.budget, self.task_id
            ),
            background: catalog_text(&self.catalog),
            reference: Some(self.reference_plan.clone()),
        }
    }

    /// The interactive view: the query withholds the numeric constraints,
    /// which the scripted user reveals one answer at a time.
    pub fn interactive_instance(&self) -> TaskInstance {
        TaskInstance {
            task_id: self.task_id.clone(),
            instruction: INTERACTIVE_INSTRUCTION.to_string(),
            query: format!(
                "Help the user plan a {}-day trip; ask the user for anything you need to know. [trip {}]",
                self.days, self.task_id
            ),
            background: catalog_text(&self.catalog),
            reference: Some(self.reference_plan.clone()),
        }
    }

    /// A ready-made example task used across unit tests.
    pub fn example(task_id: &str, budget: i64) -> Self {
        let catalog = Catalog {
            lodgings: vec![
                Lodging {
                    name: "Cedar Lodge".into(),
                    price_per_night: 105,
                    min_nights: 1,
                    capacity: 4,
                },
                Lodging {
                    name: "Hillside Cabin".into(),
                    price_per_night: 125,
                    min_nights: 2,
                    capacity: 4,
                },
                Lodging {
                    name: "Tiny Loft".into(),
                    price_per_night: 95,
                    min_nights: 1,
                    capacity: 1,
                },
                Lodging {
                    name: "Grand Meridian".into(),
                    price_per_night: 400,
                    min_nights: 1,
                    capacity: 6,
                },
            ],
            meals: vec![
                Meal {
                    name: "Harbor Grill".into(),
                    price_per_person: 30,
                    open_hour: 18,
                    close_hour: 22,
                },
                Meal {
                    name: "Noodle Bar".into(),
                    price_per_person: 20,
                    open_hour: 11,
                    close_hour: 15,
                },
            ],
            transits: vec![
                Transit {
                    name: "City Bus".into(),
                    price_per_day: 10,
                },
                Transit {
                    name: "Harbor Limo".into(),
                    price_per_day: 523,
                },
            ],
        };
        let reference_plan = (1..=3)
            .map(|day| {
                format!("Day {day}: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus")
            })
            .collect::<Vec<_>>()
            .join("\n");
        MiniPlanTask {
            task_id: task_id.to_string(),
            budget,
            days: 3,
            party_size: 2,
            catalog,
            reference_plan,
            interactive: None,
        }
    }
}

pub const INSTRUCTION: &str = "Solve the trip-planning task. Inspect the catalog with lookup actions, record one row per day with \"plan day N: Day N: lodging=<name>; dinner=<name>@<hour>; transit=<name>\", then finish with submit_plan. A valid plan stays within budget and satisfies every catalog constraint.";

pub const INTERACTIVE_INSTRUCTION: &str = "Plan the trip together with the user. The user answers one question per turn: use \"ask budget\", \"ask party\", and \"ask preferences\" to learn the constraints, record one row per day with \"plan day N: Day N: lodging=<name>; dinner=<name>@<hour>; transit=<name>\", then finish with submit_plan. A valid plan stays within budget and satisfies every catalog constraint for the whole party.";

/// Deterministic catalog listing used as background text and in lookups.
pub fn catalog_text(catalog: &Catalog) -> String {
    let mut out = String::new();
    out.push_str("Lodging options (price per night, minimum nights, capacity):\n");
    for l in &catalog.lodgings {
        out.push_str(&format!(
            "- {}: {} per night, minimum {} night(s), up to {} people\n",
            l.name, l.price_per_night, l.min_nights, l.capacity
        ));
    }
    out.push_str("Dinner options (price per person, open hours):\n");
    for m in &catalog.meals {
        out.push_str(&format!(
            "- {}: {} per person, open {}-{}\n",
            m.name, m.price_per_person, m.open_hour, m.close_hour
        ));
    }
    out.push_str("Transit options (flat price per day):\n");
    for t in &catalog.transits {
        out.push_str(&format!("- {}: {} per day\n", t.name, t.price_per_day));
    }
    out
}

fn parse_row(line: &str) -> std::result::Result<PlanRow, String> {
    let rest = line
        .strip_prefix("Day ")
        .ok_or_else(|| format!("row {line:?} does not start with \"Day \""))?;
    let (day_text, rest) = rest
        .split_once(':')
        .ok_or_else(|| format!("row {line:?} has no \":\" after the day number"))?;
    let day: u32 = day_text
        .trim()
        .parse()
        .map_err(|_| format!("day number {day_text:?} is not an integer"))?;
    let mut lodging = None;
    let mut dinner = None;
    let mut transit = None;
    for part in rest.split(';') {
        let part = part.trim();
        if let Some(v) = part.strip_prefix("lodging=") {
            lodging = Some(v.trim().to_string());
        } else if let Some(v) = part.strip_prefix("dinner=") {
            dinner = Some(v.trim().to_string());
        } else if let Some(v) = part.strip_prefix("transit=") {
            transit = Some(v.trim().to_string());
        } else if !part.is_empty() {
            return Err(format!("unknown plan field {part:?}"));
        }
    }
    let lodging = lodging.ok_or_else(|| format!("row for day {day} is missing lodging="))?;
    let dinner = dinner.ok_or_else(|| format!("row for day {day} is missing dinner="))?;
    let transit = transit.ok_or_else(|| format!("row for day {day} is missing transit="))?;
    let (meal, hour_text) = dinner
        .split_once('@')
        .ok_or_else(|| format!("dinner {dinner:?} is missing the @<hour> suffix"))?;
    let hour: u32 = hour_text
        .trim()
        .parse()
        .map_err(|_| format!("dinner hour {hour_text:?} is not an integer"))?;
    Ok(PlanRow {
        day,
        lodging: lodging.trim().to_string(),
        meal: meal.trim().to_string(),
        hour,
        transit: transit.trim().to_string(),
    })
}

/// The constraint oracle. Deterministic; violations carry the plan-row
/// index as their step index. An unparseable plan yields a single format
/// violation at the offending row.
pub fn check_plan(task: &MiniPlanTask, plan: &str) -> OracleVerdict {
    let lines: Vec<&str> = plan.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        match parse_row(line) {
            Ok(row) => rows.push(row),
            Err(detail) => {
                return OracleVerdict::from_violations(vec![Violation {
                    constraint: FORMAT_VIOLATION.into(),
                    step_index: i,
                    detail,
                }])
            }
        }
    }
    if rows.len() != task.days as usize {
        return OracleVerdict::from_violations(vec![Violation {
            constraint: FORMAT_VIOLATION.into(),
            step_index: rows.len().saturating_sub(1),
            detail: format!("expected {} day rows, found {}", task.days, rows.len()),
        }]);
    }
    for (i, row) in rows.iter().enumerate() {
        if row.day != i as u32 + 1 {
            return OracleVerdict::from_violations(vec![Violation {
                constraint: FORMAT_VIOLATION.into(),
                step_index: i,
                detail: format!("expected Day {}, found Day {}", i + 1, row.day),
            }]);
        }
    }
    // Resolve names; unknown selections are format errors (they cannot be
    // costed), reported one per offending row field, first row wins.
    for (i, row) in rows.iter().enumerate() {
        if !task.catalog.lodgings.iter().any(|l| l.name == row.lodging) {
            return OracleVerdict::from_violations(vec![Violation {
                constraint: FORMAT_VIOLATION.into(),
                step_index: i,
                detail: format!("unknown lodging {:?}", row.lodging),
            }]);
        }
        if !task.catalog.meals.iter().any(|m| m.name == row.meal) {
            return OracleVerdict::from_violations(vec![Violation {
                constraint: FORMAT_VIOLATION.into(),
                step_index: i,
                detail: format!("unknown dinner {:?}", row.meal),
            }]);
        }
        if !task.catalog.transits.iter().any(|t| t.name == row.transit) {
            return OracleVerdict::from_violations(vec![Violation {
                constraint: FORMAT_VIOLATION.into(),
                step_index: i,
                detail: format!("unknown transit {:?}", row.transit),
            }]);
        }
    }
    let mut violations = Vec::new();

    // Budget: total compared to budget; the violation sits at the row where
    // the running total first crosses the budget.
    let mut total = 0i64;
    let mut crossing_row = None;
    for (i, row) in rows.iter().enumerate() {
        let lodging = task
            .catalog
            .lodgings
            .iter()
            .find(|l| l.name == row.lodging)
            .unwrap();
        let meal = task
            .catalog
            .meals
            .iter()
            .find(|m| m.name == row.meal)
            .unwrap();
        let transit = task
            .catalog
            .transits
            .iter()
            .find(|t| t.name == row.transit)
            .unwrap();
        total += lodging.price_per_night
            + meal.price_per_person * i64::from(task.party_size)
            + transit.price_per_day;
        if total > task.budget && crossing_row.is_none() {
            crossing_row = Some(i);
        }
    }
    if let Some(step_index) = crossing_row {
        violations.push(Violation {
            constraint: BUDGET_VIOLATION.into(),
            step_index,
            detail: format!("{total} > {}", task.budget),
        });
    }

    // Lodging runs: minimum stay and capacity, reported once per run at the
    // run's first row.
    let mut run_start = 0usize;
    while run_start < rows.len() {
        let name = &rows[run_start].lodging;
        let mut run_end = run_start + 1;
        while run_end < rows.len() && rows[run_end].lodging == *name {
            run_end += 1;
        }
        let nights = (run_end - run_start) as u32;
        let lodging = task
            .catalog
            .lodgings
            .iter()
            .find(|l| l.name == *name)
            .unwrap();
        if nights < lodging.min_nights {
            violations.push(Violation {
                constraint: MIN_STAY_VIOLATION.into(),
                step_index: run_start,
                detail: format!(
                    "stayed {nights} night(s) at {name}, minimum is {}",
                    lodging.min_nights
                ),
            });
        }
        if task.party_size > lodging.capacity {
            violations.push(Violation {
                constraint: CAPACITY_VIOLATION.into(),
                step_index: run_start,
                detail: format!(
                    "party of {} exceeds capacity {} at {name}",
                    task.party_size, lodging.capacity
                ),
            });
        }
        run_start = run_end;
    }

    // Meal hours, per row.
    for (i, row) in rows.iter().enumerate() {
        let meal = task
            .catalog
            .meals
            .iter()
            .find(|m| m.name == row.meal)
            .unwrap();
        if row.hour < meal.open_hour || row.hour > meal.close_hour {
            violations.push(Violation {
                constraint: MEAL_HOURS_VIOLATION.into(),
                step_index: i,
                detail: format!(
                    "dinner at {} is outside {}-{} at {}",
                    row.hour, meal.open_hour, meal.close_hour, meal.name
                ),
            });
        }
    }

    OracleVerdict::from_violations(violations)
}

/// Build a plan that violates exactly `modes` (empty set → the reference
/// plan). The result is self-checked against the oracle; a catalog that
/// cannot express a requested mode is an error.
pub fn scripted_plan(task: &MiniPlanTask, modes: &BTreeSet<ErrorMode>) -> Result<String> {
    let mut rows: Vec<PlanRow> = task
        .reference_plan
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            parse_row(l)
                .map_err(|d| Error::Env(format!("{}: bad reference row: {d}", task.task_id)))
        })
        .collect::<Result<_>>()?;

    if modes.contains(&ErrorMode::Capacity) {
        let vehicle = task
            .catalog
            .lodgings
            .iter()
            .find(|l| l.capacity < task.party_size && l.min_nights <= 1)
            .ok_or_else(|| {
                Error::Env(format!(
                    "{}: no lodging can violate capacity alone",
                    task.task_id
                ))
            })?;
        rows[0].lodging = vehicle.name.clone();
    }
    if modes.contains(&ErrorMode::MinStay) {
        let vehicle = task
            .catalog
            .lodgings
            .iter()
            .find(|l| l.min_nights >= 2 && l.capacity >= task.party_size)
            .ok_or_else(|| {
                Error::Env(format!(
                    "{}: no lodging can violate minimum stay alone",
                    task.task_id
                ))
            })?;
        let idx = 1usize.min(rows.len() - 1);
        rows[idx].lodging = vehicle.name.clone();
    }
    if modes.contains(&ErrorMode::MealHours) {
        let (meal, hour) = task
            .catalog
            .meals
            .iter()
            .find_map(|m| {
                if m.close_hour < 23 {
                    Some((m, (m.close_hour + 4).min(23)))
                } else if m.open_hour > 0 {
                    Some((m, m.open_hour - 1))
                } else {
                    None
                }
            })
            .ok_or_else(|| {
                Error::Env(format!(
                    "{}: no meal can violate opening hours",
                    task.task_id
                ))
            })?;
        rows[0].meal = meal.name.clone();
        rows[0].hour = hour;
    }
    if modes.contains(&ErrorMode::Budget) {
        let vehicle = task
            .catalog
            .transits
            .iter()
            .max_by_key(|t| t.price_per_day)
            .expect("catalog validated non-empty");
        for row in &mut rows {
            row.transit = vehicle.name.clone();
        }
    }

    let plan = rows
        .iter()
        .map(|r| {
            format!(
                "Day {}: lodging={}; dinner={}@{}; transit={}",
                r.day, r.lodging, r.meal, r.hour, r.transit
            )
        })
        .collect::<Vec<_>>()
        .join("\n");

    let expected: BTreeSet<String> = modes.iter().map(|m| m.constraint().to_string()).collect();
    let actual = check_plan(task, &plan).constraint_names();
    if actual != expected {
        return Err(Error::Env(format!(
            "{}: planted modes {expected:?} but oracle found {actual:?}",
            task.task_id
        )));
    }
    Ok(plan)
}

/// Per-step action script: plan rows then submit.
pub struct ScriptedActor {
    actions: Vec<String>,
    cursor: usize,
}

impl ScriptedActor {
    pub fn new(task: &MiniPlanTask, modes: &BTreeSet<ErrorMode>) -> Result<Self> {
        let plan = scripted_plan(task, modes)?;
        let mut actions: Vec<String> = plan
            .lines()
            .map(|row| format!("plan day {}: {row}", row_day(row)))
            .collect();
        actions.push("submit_plan".to_string());
        Ok(ScriptedActor { actions, cursor: 0 })
    }

    pub fn next_action(&mut self) -> Option<String> {
        let action = self.actions.get(self.cursor).cloned();
        self.cursor += 1;
        action
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }
}

fn row_day(row: &str) -> u32 {
    parse_row(row).map(|r| r.day).unwrap_or(0)
}

/// Batch environment: lookups, day recording, and plan submission.
pub struct MiniPlanEnv {
    task: MiniPlanTask,
    rows: Vec<Option<String>>,
    submitted: Option<String>,
    active: bool,
}

impl MiniPlanEnv {
    pub fn new(task: MiniPlanTask) -> Result<Self> {
        task.validate()?;
        let days = task.days as usize;
        Ok(MiniPlanEnv {
            task,
            rows: vec![None; days],
            submitted: None,
            active: false,
        })
    }

    pub fn task(&self) -> &MiniPlanTask {
        &self.task
    }

    fn assemble_plan(&self) -> String {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.clone()
                    .unwrap_or_else(|| format!("Day {}: (not planned)", i + 1))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn handle_action(&mut self, action: &str) -> (String, bool) {
        let action = action.trim();
        if action == "lookup catalog" {
            return (catalog_text(&self.task.catalog), false);
        }
        if action == "lookup lodging" {
            let listing = self
                .task
                .catalog
                .lodgings
                .iter()
                .map(|l| {
                    format!(
                        "- {}: {} per night, minimum {} night(s), up to {} people",
                        l.name, l.price_per_night, l.min_nights, l.capacity
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            return (listing, false);
        }
        if action == "lookup meals" {
            let listing = self
                .task
                .catalog
                .meals
                .iter()
                .map(|m| {
                    format!(
                        "- {}: {} per person, open {}-{}",
                        m.name, m.price_per_person, m.open_hour, m.close_hour
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            return (listing, false);
        }
        if action == "lookup transit" {
            let listing = self
                .task
                .catalog
                .transits
                .iter()
                .map(|t| format!("- {}: {} per day", t.name, t.price_per_day))
                .collect::<Vec<_>>()
                .join("\n");
            return (listing, false);
        }
        if let Some(rest) = action.strip_prefix("plan day ") {
            if let Some((day_text, row)) = rest.split_once(':') {
                if let Ok(day) = day_text.trim().parse::<u32>() {
                    if day >= 1 && day <= self.task.days {
                        self.rows[(day - 1) as usize] = Some(row.trim().to_string());
                        return (format!("Recorded day {day}."), false);
                    }
                }
            }
            return (
                format!(
                    "invalid action: plan day must name a day between 1 and {}",
                    self.task.days
                ),
                false,
            );
        }
        if action == "submit_plan" {
            let plan = self.assemble_plan();
            let verdict = check_plan(&self.task, &plan);
            self.submitted = Some(plan);
            self.active = false;
            return (verdict.summary(), true);
        }
        (format!("invalid action: {action:?}"), false)
    }
}

impl Environment for MiniPlanEnv {
    fn reset(&mut self) -> Result<String> {
        self.rows = vec![None; self.task.days as usize];
        self.submitted = None;
        self.active = true;
        Ok(format!(
            "{}\n\n{}",
            self.task.instance().query,
            catalog_text(&self.task.catalog)
        ))
    }

    fn step(&mut self, action: &str) -> Result<(String, bool)> {
        if !self.active {
            return Err(Error::Env("episode is not active; call reset first".into()));
        }
        Ok(self.handle_action(action))
    }

    fn final_output(&self) -> Option<String> {
        self.submitted.clone()
    }

    fn judge(&self, final_output: &str) -> Result<bool> {
        Ok(check_plan(&self.task, final_output).pass)
    }
}

/// Surprise response text used by the interactive variant. The diff mock
/// keys on this text, which is task-independent by design.
pub const SURPRISE_RESPONSE: &str =
    "Actually, one more person just joined the trip; please plan for the larger group.";

/// Interactive variant: a scripted user answers questions one constraint at
/// a time; at `surprise_turn` the user's answer changes the party size.
pub struct MiniPlanInteractiveEnv {
    inner: MiniPlanEnv,
    turn: u32,
    effective_party: u32,
}

impl MiniPlanInteractiveEnv {
    pub fn new(task: MiniPlanTask) -> Result<Self> {
        let party = task.party_size;
        Ok(MiniPlanInteractiveEnv {
            inner: MiniPlanEnv::new(task)?,
            turn: 0,
            effective_party: party,
        })
    }

    pub fn task(&self) -> &MiniPlanTask {
        &self.inner.task
    }

    fn surprise_turn(&self) -> Option<u32> {
        self.inner
            .task
            .interactive
            .as_ref()
            .and_then(|i| i.surprise_turn)
    }

    fn judged_task(&self) -> MiniPlanTask {
        let mut task = self.inner.task.clone();
        task.party_size = self.effective_party;
        task
    }
}

impl Environment for MiniPlanInteractiveEnv {
    fn reset(&mut self) -> Result<String> {
        self.turn = 0;
        self.effective_party = self.inner.task.party_size;
        self.inner.reset()?;
        // The interactive setting reveals constraints turn by turn, so the
        // initial observation carries the catalog but not the query numbers.
        Ok(format!(
            "You are planning a trip with a user who answers questions one at a time. [trip {}]\n\n{}",
            self.inner.task.task_id,
            catalog_text(&self.inner.task.catalog)
        ))
    }

    fn step(&mut self, action: &str) -> Result<(String, bool)> {
        if !self.inner.active {
            return Err(Error::Env("episode is not active; call reset first".into()));
        }
        self.turn += 1;
        if self.surprise_turn() == Some(self.turn) {
            self.effective_party = self.inner.task.party_size + 1;
            return Ok((SURPRISE_RESPONSE.to_string(), false));
        }
        let action = action.trim();
        if action == "ask budget" {
            return Ok((
                format!("The total budget is {}.", self.inner.task.budget),
                false,
            ));
        }
        if action == "ask party" {
            return Ok((
                format!("The party size is {}.", self.effective_party),
                false,
            ));
        }
        if action == "ask preferences" {
            return Ok(("No special preferences.".to_string(), false));
        }
        if action == "submit_plan" {
            let plan = self.inner.assemble_plan();
            let verdict = check_plan(&self.judged_task(), &plan);
            self.inner.submitted = Some(plan);
            self.inner.active = false;
            return Ok((verdict.summary(), true));
        }
        Ok(self.inner.handle_action(action))
    }

    fn final_output(&self) -> Option<String> {
        self.inner.submitted.clone()
    }

    fn judge(&self, final_output: &str) -> Result<bool> {
        Ok(check_plan(&self.judged_task(), final_output).pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> MiniPlanTask {
        MiniPlanTask::example("t01", 1900)
    }

    #[test]
    fn reference_plan_passes() {
        let verdict = check_plan(&task(), &task().reference_plan);
        assert!(verdict.pass, "{}", verdict.summary());
        assert!(verdict.violations.is_empty());
    }

    #[test]
    fn budget_violation_detail_matches_the_worked_example() {
        let plan = scripted_plan(&task(), &BTreeSet::from([ErrorMode::Budget])).unwrap();
        let verdict = check_plan(&task(), &plan);
        assert_eq!(verdict.violations.len(), 1);
        let v = &verdict.violations[0];
        assert_eq!(v.constraint, BUDGET_VIOLATION);
        assert_eq!(v.detail, "2064 > 1900");
        assert_eq!(
            v.step_index, 2,
            "running total crosses 1900 on the third row"
        );
    }

    #[test]
    fn one_night_stay_at_min_two_lodging_violates() {
        let plan = scripted_plan(&task(), &BTreeSet::from([ErrorMode::MinStay])).unwrap();
        let verdict = check_plan(&task(), &plan);
        assert_eq!(verdict.violations.len(), 1);
        let v = &verdict.violations[0];
        assert_eq!(v.constraint, MIN_STAY_VIOLATION);
        assert_eq!(v.step_index, 1);
        assert!(v.detail.contains("1 night(s)"), "{}", v.detail);
        assert!(v.detail.contains("minimum is 2"), "{}", v.detail);
    }

    #[test]
    fn all_singletons_and_pairs_plant_exactly_their_modes() {
        let task = task();
        let mut combos: Vec<BTreeSet<ErrorMode>> = Vec::new();
        for (i, a) in ErrorMode::ALL.iter().enumerate() {
            combos.push(BTreeSet::from([*a]));
            for b in &ErrorMode::ALL[i + 1..] {
                combos.push(BTreeSet::from([*a, *b]));
            }
        }
        assert_eq!(combos.len(), 10);
        for modes in combos {
            let plan = scripted_plan(&task, &modes).unwrap();
            let verdict = check_plan(&task, &plan);
            let expected: BTreeSet<String> =
                modes.iter().map(|m| m.constraint().to_string()).collect();
            assert_eq!(verdict.constraint_names(), expected, "modes {modes:?}");
        }
    }

    #[test]
    fn empty_mode_set_reproduces_the_reference() {
        let plan = scripted_plan(&task(), &BTreeSet::new()).unwrap();
        assert_eq!(plan, task().reference_plan);
        assert!(check_plan(&task(), &plan).pass);
    }

    #[test]
    fn unparseable_plans_yield_a_single_format_violation() {
        for (plan, expect) in [
            ("pure gibberish", "does not start"),
            ("Day 1: lodging=Cedar Lodge; transit=City Bus", "missing dinner="),
            ("Day one: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus", "not an integer"),
            (
                "Day 1: lodging=Phantom Inn; dinner=Harbor Grill@19; transit=City Bus\nDay 2: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus\nDay 3: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus",
                "unknown lodging",
            ),
        ] {
            let verdict = check_plan(&task(), plan);
            assert!(!verdict.pass);
            assert_eq!(verdict.violations.len(), 1, "plan {plan:?}");
            assert_eq!(verdict.violations[0].constraint, FORMAT_VIOLATION);
            assert!(
                verdict.violations[0].detail.contains(expect),
                "detail {:?} should mention {expect:?}",
                verdict.violations[0].detail
            );
        }
    }

    #[test]
    fn wrong_row_count_is_a_format_violation() {
        let one_row = "Day 1: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus";
        let verdict = check_plan(&task(), one_row);
        assert_eq!(verdict.violations[0].constraint, FORMAT_VIOLATION);
        assert!(verdict.violations[0].detail.contains("expected 3 day rows"));
    }

    #[test]
    fn env_episode_reaches_a_verdict() {
        let mut env = MiniPlanEnv::new(task()).unwrap();
        let obs = env.reset().unwrap();
        assert!(obs.contains("[trip t01]"));
        assert!(obs.contains("Cedar Lodge"));
        let (listing, done) = env.step("lookup lodging").unwrap();
        assert!(!done);
        assert!(listing.contains("Hillside Cabin"));
        let mut actor = ScriptedActor::new(env.task(), &BTreeSet::new()).unwrap();
        let mut last = (String::new(), false);
        while let Some(action) = actor.next_action() {
            last = env.step(&action).unwrap();
        }
        assert!(last.1, "submit ends the episode");
        assert!(last.0.contains("valid"), "{}", last.0);
        assert_eq!(env.final_output().unwrap(), task().reference_plan);
    }

    #[test]
    fn submit_response_embeds_constraint_names() {
        let mut env = MiniPlanEnv::new(task()).unwrap();
        env.reset().unwrap();
        let mut actor =
            ScriptedActor::new(env.task(), &BTreeSet::from([ErrorMode::Budget])).unwrap();
        let mut last = (String::new(), false);
        while let Some(action) = actor.next_action() {
            last = env.step(&action).unwrap();
        }
        assert!(last.1);
        assert!(last.0.contains(BUDGET_VIOLATION), "{}", last.0);
    }

    #[test]
    fn gibberish_action_recovers() {
        let mut env = MiniPlanEnv::new(task()).unwrap();
        env.reset().unwrap();
        let (response, done) = env.step("fly to the moon").unwrap();
        assert!(!done);
        assert!(response.contains("invalid action"));
        let (_, done) = env.step("lookup catalog").unwrap();
        assert!(!done, "episode still active after an invalid action");
    }

    #[test]
    fn determinism_identical_action_sequences_identical_transcripts() {
        let run = || {
            let mut env = MiniPlanEnv::new(task()).unwrap();
            let mut transcript = vec![env.reset().unwrap()];
            for action in [
                "lookup catalog",
                "plan day 1: Day 1: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus",
                "submit_plan",
            ] {
                let (obs, _) = env.step(action).unwrap();
                transcript.push(obs);
            }
            transcript
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_tasks_fail_at_load_time() {
        let mut no_catalog = task();
        no_catalog.catalog.lodgings.clear();
        assert!(no_catalog.validate().is_err());

        let mut bad_reference = task();
        bad_reference.reference_plan = "Day 1: nonsense".into();
        let err = bad_reference.validate().unwrap_err();
        assert!(err.to_string().contains("reference_plan fails"), "{err}");
    }

    #[test]
    fn interactive_surprise_changes_the_party_size() {
        let mut task = task();
        task.interactive = Some(InteractiveSpec {
            surprise_turn: Some(3),
        });
        let mut env = MiniPlanInteractiveEnv::new(task).unwrap();
        env.reset().unwrap();
        let (r1, _) = env.step("ask budget").unwrap();
        assert_eq!(r1, "The total budget is 1900.");
        let (r2, _) = env.step("ask party").unwrap();
        assert_eq!(r2, "The party size is 2.");
        let (r3, _) = env.step("ask preferences").unwrap();
        assert_eq!(r3, SURPRISE_RESPONSE);
        let (r4, _) = env.step("ask party").unwrap();
        assert_eq!(r4, "The party size is 3.", "surprise takes effect");
    }

    #[test]
    fn interactive_without_surprise_is_plain() {
        let mut env = MiniPlanInteractiveEnv::new(task()).unwrap();
        env.reset().unwrap();
        for _ in 0..5 {
            let (r, _) = env.step("ask preferences").unwrap();
            assert_eq!(r, "No special preferences.");
        }
    }

    #[test]
    fn interactive_verdict_uses_the_effective_party() {
        // After the surprise the party is 3; a Tiny Loft plan (capacity 1)
        // still violates, and costs rise with the extra diner.
        let mut task = task();
        task.interactive = Some(InteractiveSpec {
            surprise_turn: Some(1),
        });
        let mut env = MiniPlanInteractiveEnv::new(task).unwrap();
        env.reset().unwrap();
        env.step("ask preferences").unwrap(); // springs the surprise
        for day in 1..=3 {
            env.step(&format!(
                "plan day {day}: Day {day}: lodging=Cedar Lodge; dinner=Harbor Grill@19; transit=City Bus"
            ))
            .unwrap();
        }
        let (response, done) = env.step("submit_plan").unwrap();
        assert!(done);
        assert!(response.contains("valid"), "{response}");
        // 3 × (105 + 30·3 + 10) = 615 — still within 1900 with party 3.
        let plan = env.final_output().unwrap();
        assert!(env.judge(&plan).unwrap());
    }
}
