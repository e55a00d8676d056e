//! Acceptance gate: one test per product criterion, each printing a
//! single pass line (visible with `cargo test --test acceptance --
//! --nocapture`). Every check runs offline against the scripted mock
//! backend and the toy planning environment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use retrospect_core::canonical::{read_json, sha256_file, to_canonical_line};
use retrospect_core::config::{BackendConfig, ReductionFormula, ReferencePolicy, RunConfig};
use retrospect_core::dataset::{
    FlatRecord, SftRecord, TRAIN_FILE, TRAIN_FLAT_FILE, VAL_FILE, VAL_FLAT_FILE,
};
use retrospect_core::envs::miniplan::{check_plan, scripted_plan, ErrorMode, MiniPlanTask};
use retrospect_core::fixtures;
use retrospect_core::gateway::audit::read_audit;
use retrospect_core::gateway::parse::{parse_classification_output, parse_taxonomy_output};
use retrospect_core::gateway::PromptRole;
use retrospect_core::metrics::{error_reduction, pass_rate, trial_curve};
use retrospect_core::model::{ErrorLabel, ErrorPath, Outcome, ReflectionSource, Step, Trajectory};
use retrospect_core::pipeline::{emit_corpus, evaluate, run_interactive_pipeline, run_pipeline};
use retrospect_core::pool::TrajectoryPool;
use retrospect_core::synthesis::{group_by_error, ErrorCluster};

fn pass(number: u8, line: &str) {
    println!("[PASS] criterion {number:02} — {line}");
}

/// Fixtures written into `root` plus a config with absolute paths.
fn prepared_config(root: &Path, script: &str, run_dir: &str) -> RunConfig {
    fixtures::write_all(root).unwrap();
    RunConfig {
        backend: BackendConfig::Mock {
            script: root.join("fixtures/mock").join(script),
        },
        tasks: root.join("fixtures/miniplan"),
        run_dir: root.join(run_dir),
        ..RunConfig::default()
    }
}

const RUN_ARTIFACTS: [&str; 13] = [
    "trajectories.jsonl",
    "error_paths.jsonl",
    "reflections.jsonl",
    "taxonomy.json",
    "counters.json",
    "metrics.json",
    "trial_curve.csv",
    "reduction_trajectories.jsonl",
    "reduction_paths.jsonl",
    "sft_train.jsonl",
    "sft_val.jsonl",
    "sft_train_flat.jsonl",
    "sft_val_flat.jsonl",
];

fn artifact_digests(run_dir: &Path) -> BTreeMap<String, String> {
    RUN_ARTIFACTS
        .iter()
        .map(|name| (name.to_string(), sha256_file(&run_dir.join(name)).unwrap()))
        .collect()
}

/// Full synthesis + corpus + scoring over the toy fixtures.
fn full_run(root: &Path) -> RunConfig {
    let config = prepared_config(root, "synthesize.json", "runs/toy");
    run_pipeline(config.clone()).unwrap();
    emit_corpus(&config).unwrap();
    evaluate(&config).unwrap();
    config
}

/// Criterion 1: a full pipeline run on the 12-task toy fixture is fast and
/// deterministic — three consecutive runs produce byte-identical artifacts
/// whose digests match the pinned golden values.
#[test]
fn c01_end_to_end_determinism() {
    let pinned: BTreeMap<String, String> = read_json(Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/pipeline_digests.json"
    )))
    .expect("pinned digests exist; refresh via UPDATE_GOLDEN=1 on the golden_digests test");
    let started = Instant::now();
    let mut digest_sets = Vec::new();
    for _ in 0..3 {
        let root = tempfile::tempdir().unwrap();
        let config = full_run(root.path());
        digest_sets.push(artifact_digests(&config.run_dir));
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "three full runs took {elapsed:?}, budget is 60 s"
    );
    assert_eq!(digest_sets[0], digest_sets[1]);
    assert_eq!(digest_sets[1], digest_sets[2]);
    assert_eq!(
        digest_sets[0], pinned,
        "artifacts drifted from the pinned digests"
    );
    pass(
        1,
        &format!(
            "3 consecutive runs byte-identical and equal to the {} pinned digests in {:.2?}",
            pinned.len(),
            elapsed
        ),
    );
}

/// Criterion 2: the synthesis-stage contracts hold on the fixture run —
/// the taxonomy only grows across tasks, every stored label names a
/// taxonomy type, micro reflections pair 1:1 with failed trials, and a
/// trial k ≥ 2 exists only because trial k−1 failed.
#[test]
fn c02_stage_contracts() {
    let root = tempfile::tempdir().unwrap();
    let config = prepared_config(root.path(), "synthesize.json", "runs/toy");
    run_pipeline(config.clone()).unwrap();
    let pool = TrajectoryPool::load(&config.run_dir).unwrap();

    // Taxonomy growth, observed from the prompts: each extension prompt
    // carries the taxonomy as it stood, so sizes must be non-decreasing
    // in call order.
    let audit = read_audit(&config.run_dir.join("audit.jsonl")).unwrap();
    let mut sizes = Vec::new();
    for entry in &audit {
        if entry.role != PromptRole::TaxonomyExtend {
            continue;
        }
        let block = entry
            .prompt
            .rsplit("Error Taxonomy:\n")
            .next()
            .expect("extension prompt ends with the current taxonomy");
        sizes.push(block.lines().filter(|l| l.starts_with("- ")).count());
    }
    assert!(!sizes.is_empty());
    assert!(
        sizes.windows(2).all(|w| w[0] <= w[1]),
        "taxonomy shrank between tasks: {sizes:?}"
    );
    assert!(*sizes.last().unwrap() <= pool.taxonomy.len());
    assert_eq!(pool.taxonomy.len(), 4);

    // Every stored label names a type in the final taxonomy.
    let mut labels = 0usize;
    for path in pool.error_paths() {
        for label in &path.labels {
            labels += 1;
            assert!(
                pool.taxonomy.contains(&label.error_type),
                "label type {:?} missing from the taxonomy",
                label.error_type
            );
        }
    }
    assert!(labels > 0);

    // Micro reflections pair 1:1 with failed trials.
    let failed: BTreeSet<(String, u32)> = pool
        .trajectories()
        .filter(|t| t.outcome == Outcome::Fail)
        .map(|t| (t.task_id.clone(), t.trial_index))
        .collect();
    let micro: BTreeSet<(String, u32)> = pool
        .micro_reflections()
        .map(|r| match &r.source {
            ReflectionSource::Trial {
                task_id,
                trial_index,
            } => (task_id.clone(), *trial_index),
            other => panic!("micro reflection with non-trial source {other:?}"),
        })
        .collect();
    assert_eq!(micro, failed);
    assert_eq!(micro.len(), 27);

    // A retry exists only after a failure, and trials are contiguous.
    for task_id in pool.task_ids() {
        let trials = pool.trials_of(&task_id);
        for (i, trial) in trials.iter().enumerate() {
            assert_eq!(
                trial.trial_index,
                i as u32 + 1,
                "{task_id} trials not contiguous"
            );
            if i > 0 {
                assert_eq!(
                    trials[i - 1].outcome,
                    Outcome::Fail,
                    "{task_id} trial {} exists but trial {} did not fail",
                    trial.trial_index,
                    trials[i - 1].trial_index
                );
            }
        }
    }
    pass(
        2,
        &format!(
            "taxonomy sizes {sizes:?} non-decreasing; {labels} labels all in-taxonomy; 27 micro reflections = 27 failed trials; every retry followed a failure"
        ),
    );
}

/// Deterministic test-local generator (xorshift64*), so the randomized
/// pools need no external randomness.
struct TestRng(u64);

impl TestRng {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    fn below(&mut self, bound: u64) -> u64 {
        self.next() % bound
    }
}

/// Criterion 3: the error-type clustering agrees exactly with a
/// brute-force membership scan on 100 randomized pools.
#[test]
fn c03_clustering_matches_brute_force() {
    let mut checked_clusters = 0usize;
    for seed in 1..=100u64 {
        let mut rng = TestRng(seed.wrapping_mul(0x9E3779B97F4A7C15) | 1);
        let mut pool = TrajectoryPool::new();
        let n_types = 1 + rng.below(8) as usize;
        let type_names: Vec<String> = (0..n_types)
            .map(|i| {
                let name = format!("synthetic error {i}");
                pool.taxonomy.push_type(&name).unwrap();
                name
            })
            .collect();
        let n_traj = 1 + rng.below(50) as usize;
        for i in 0..n_traj {
            // Several trials per task so clusters mix trial indices.
            let task_id = format!("p{:02}", i / 3);
            let trial_index = (i % 3) as u32 + 1;
            let n_steps = 1 + rng.below(6) as usize;
            let steps: Vec<Step> = (0..n_steps)
                .map(|index| Step {
                    index,
                    thought: None,
                    action: format!("act {index}"),
                    observation: "ok".to_string(),
                })
                .collect();
            pool.insert_trajectory(Trajectory {
                task_id: task_id.clone(),
                trial_index,
                steps,
                final_output: "plan".to_string(),
                outcome: Outcome::Fail,
                foresight: Vec::new(),
            })
            .unwrap();
            // At most one label per (step, type): the pool rejects duplicates.
            let mut planted: BTreeSet<(usize, usize)> = BTreeSet::new();
            for step_index in 0..n_steps {
                for _ in 0..rng.below(3) {
                    planted.insert((step_index, rng.below(n_types as u64) as usize));
                }
            }
            let labels: Vec<ErrorLabel> = planted
                .into_iter()
                .map(|(step_index, type_idx)| ErrorLabel {
                    step_index,
                    error_type: type_names[type_idx].clone(),
                    critique: format!("critique at {step_index}"),
                })
                .collect();
            pool.insert_error_path(ErrorPath {
                task_id,
                trial_index,
                labels,
                rationale: "synthetic".to_string(),
            })
            .unwrap();
        }

        // Brute force: scan every path for every type name.
        let mut expected: Vec<ErrorCluster> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for path in pool.error_paths() {
            for name in path.error_types() {
                seen.insert(name);
            }
        }
        for name in seen {
            let mut members: Vec<(String, u32)> = pool
                .error_paths()
                .filter(|p| p.labels.iter().any(|l| l.error_type == name))
                .map(|p| (p.task_id.clone(), p.trial_index))
                .collect();
            members.sort();
            expected.push(ErrorCluster {
                canonical_name: name,
                members,
            });
        }

        let actual = group_by_error(&pool);
        assert_eq!(actual, expected, "clustering mismatch on pool seed {seed}");
        checked_clusters += actual.len();
    }
    pass(
        3,
        &format!("group_by_error equals brute force on 100 randomized pools ({checked_clusters} clusters compared)"),
    );
}

/// Criterion 4: every final reflection's merge manifest lists exactly the
/// error types of that trajectory's error path.
#[test]
fn c04_merge_manifest_fidelity() {
    let root = tempfile::tempdir().unwrap();
    let config = prepared_config(root.path(), "synthesize.json", "runs/toy");
    run_pipeline(config.clone()).unwrap();
    let pool = TrajectoryPool::load(&config.run_dir).unwrap();
    let mut checked = 0usize;
    for reflection in pool.final_reflections() {
        let (task_id, trial_index) = match &reflection.source {
            ReflectionSource::Trial {
                task_id,
                trial_index,
            } => (task_id.clone(), *trial_index),
            other => panic!("final reflection with non-trial source {other:?}"),
        };
        let manifest = reflection.manifest.as_ref().unwrap_or_else(|| {
            panic!("final reflection ({task_id}, {trial_index}) has no manifest")
        });
        let path = pool
            .error_path(&task_id, trial_index)
            .unwrap_or_else(|| panic!("({task_id}, {trial_index}) has no error path"));
        assert_eq!(
            manifest.error_types,
            path.error_types(),
            "manifest/path mismatch for ({task_id}, {trial_index})"
        );
        checked += 1;
    }
    assert_eq!(checked, 27);
    pass(
        4,
        &format!("all {checked} merge manifests list exactly their error path's types"),
    );
}

/// Criterion 5: the plan oracle flags exactly the planted violations over
/// the fixture grid, which covers every singleton and every pair of the
/// four constraint families.
#[test]
fn c05_oracle_soundness_over_the_planted_grid() {
    let tasks: BTreeMap<String, MiniPlanTask> = fixtures::build_tasks()
        .unwrap()
        .into_iter()
        .map(|t| (t.task_id.clone(), t))
        .collect();
    let mut covered: BTreeSet<Vec<ErrorMode>> = BTreeSet::new();
    let mut checked = 0usize;
    for (task_id, _, trials) in fixtures::task_schedule() {
        let task = &tasks[task_id];
        for modes in trials {
            let mode_set: BTreeSet<ErrorMode> = modes.iter().copied().collect();
            let plan = scripted_plan(task, &mode_set).unwrap();
            let verdict = check_plan(task, &plan);
            let expected: BTreeSet<String> = mode_set
                .iter()
                .map(|m| m.constraint().to_string())
                .collect();
            assert_eq!(
                verdict.constraint_names(),
                expected,
                "oracle verdict mismatch for {task_id} with planted {mode_set:?}"
            );
            assert_eq!(verdict.pass, mode_set.is_empty());
            let mut key: Vec<ErrorMode> = mode_set.into_iter().collect();
            key.sort();
            covered.insert(key);
            checked += 1;
        }
    }
    for mode in ErrorMode::ALL {
        assert!(
            covered.contains(&vec![mode]),
            "singleton {mode:?} not planted"
        );
    }
    let mut pairs = 0;
    for (i, a) in ErrorMode::ALL.iter().enumerate() {
        for b in ErrorMode::ALL.iter().skip(i + 1) {
            let mut pair = vec![*a, *b];
            pair.sort();
            assert!(covered.contains(&pair), "pair {pair:?} not planted");
            pairs += 1;
        }
    }
    pass(
        5,
        &format!(
            "oracle matched the planted modes on {checked} planted plans covering all 4 singletons and {pairs} pairs"
        ),
    );
}

/// Criterion 6: the foresight loop reflects exactly once per episode with
/// a planted surprise, at the planted turn, and the reflection steers the
/// following actor prompt; surprise-free episodes never reflect.
#[test]
fn c06_foresight_triggering() {
    let root = tempfile::tempdir().unwrap();
    let config = prepared_config(root.path(), "interactive.json", "runs/toy_interactive");
    let episodes = run_interactive_pipeline(config.clone()).unwrap();
    assert_eq!(episodes.len(), 12);
    let pool = TrajectoryPool::load(&config.run_dir).unwrap();
    let audit = read_audit(&config.run_dir.join("audit.jsonl")).unwrap();

    let surprise_index = fixtures::SURPRISE_TURN as usize - 1;
    for episode in &episodes {
        let id = episode.task_id.as_str();
        let planted = fixtures::SURPRISE_TASKS.contains(&id);
        let expected = usize::from(planted);
        assert_eq!(
            episode.reflections_triggered, expected,
            "{id}: expected {expected} trigger(s)"
        );
        assert_eq!(episode.midcourse_reflections.len(), expected);

        // Per-turn record: the one deviation sits exactly on the planted turn.
        let trajectory = pool.trajectory(id, 1).unwrap();
        for turn in &trajectory.foresight {
            let here = planted && turn.index == surprise_index;
            assert_eq!(
                turn.deviated, here,
                "{id} turn {}: deviated={} (planted surprise at index {surprise_index})",
                turn.index, turn.deviated
            );
            assert_eq!(turn.reflection_triggered, here);
        }

        let marker = format!("[trip {id}]");
        let midcourse_seqs: Vec<u64> = audit
            .iter()
            .filter(|e| e.role == PromptRole::ReflectMidcourse && e.prompt.contains(&marker))
            .map(|e| e.seq)
            .collect();
        if planted {
            assert_eq!(
                midcourse_seqs.len(),
                1,
                "{id}: one mid-course call expected"
            );
            // The reflection steers the next actor prompt of this episode.
            let text = &episode.midcourse_reflections[0];
            let next_actor = audit
                .iter()
                .find(|e| {
                    e.role == PromptRole::ActorReact
                        && e.seq > midcourse_seqs[0]
                        && e.prompt.contains(&marker)
                })
                .unwrap_or_else(|| panic!("{id}: no actor call after the mid-course reflection"));
            assert!(
                next_actor.prompt.contains(text),
                "{id}: the following actor prompt does not carry the reflection"
            );
        } else {
            assert!(
                midcourse_seqs.is_empty(),
                "{id}: unexpected mid-course call"
            );
        }
    }

    // Short-circuiting: only the six planted deviations reached the diff
    // model, and each produced exactly one mid-course reflection.
    let diff_calls = audit
        .iter()
        .filter(|e| e.role == PromptRole::ForesightDiff)
        .count();
    let midcourse_calls = audit
        .iter()
        .filter(|e| e.role == PromptRole::ReflectMidcourse)
        .count();
    assert_eq!(diff_calls, fixtures::SURPRISE_TASKS.len());
    assert_eq!(midcourse_calls, fixtures::SURPRISE_TASKS.len());
    pass(
        6,
        &format!(
            "6 planted surprises each triggered exactly one reflection at turn index {surprise_index}, steering the next actor prompt; 6 surprise-free episodes triggered none"
        ),
    );
}

/// Criterion 7: the scoring functions reproduce the pinned reference
/// values at the declared two-decimal precision.
#[test]
fn c07_pinned_metric_values() {
    assert_eq!(pass_rate(36, 180).unwrap(), 20.00);

    let solved_at = [Some(1), Some(2), Some(2), None];
    assert_eq!(
        trial_curve(&solved_at, 4).unwrap(),
        vec![25.00, 75.00, 75.00, 75.00]
    );

    let path = |trial_index: u32, labels: &[&str]| ErrorPath {
        task_id: "m1".to_string(),
        trial_index,
        labels: labels
            .iter()
            .enumerate()
            .map(|(i, name)| ErrorLabel {
                step_index: i,
                error_type: name.to_string(),
                critique: "c".to_string(),
            })
            .collect(),
        rationale: "r".to_string(),
    };
    let before = [path(1, &["budget constraint violation"; 3])];
    let after = [path(2, &["budget constraint violation"])];
    assert_eq!(
        error_reduction(&before, &after, ReductionFormula::LabelCount).unwrap(),
        0.67
    );
    pass(
        7,
        "pass_rate(36/180)=20.00; trial_curve({1,2,2,never}, K=4)=[25.00, 75.00, 75.00, 75.00]; error_reduction(3→1)=0.67",
    );
}

/// Criterion 8: the emitted corpus has one record per final reflection,
/// round-trips byte-identically, and the seeded task-level split matches
/// an independently computed shuffle for 20 seeds.
#[test]
fn c08_corpus_integrity() {
    let root = tempfile::tempdir().unwrap();
    let config = prepared_config(root.path(), "synthesize.json", "runs/toy");
    run_pipeline(config.clone()).unwrap();
    let pool = TrajectoryPool::load(&config.run_dir).unwrap();
    let final_ids: BTreeSet<String> = pool
        .final_reflections()
        .map(|r| match &r.source {
            ReflectionSource::Trial {
                task_id,
                trial_index,
            } => format!("{task_id}#{trial_index}"),
            other => panic!("final reflection with non-trial source {other:?}"),
        })
        .collect();

    let read_lines = |name: &str| -> Vec<String> {
        std::fs::read_to_string(config.run_dir.join(name))
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect()
    };

    // Independent shuffle oracle: order tasks by sha256("{seed}:{id}") and
    // take the round-half-up share as the training set.
    let hex = |bytes: &[u8]| -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    };
    let expected_split = |task_ids: &BTreeSet<String>, seed: u64, ratio: f64| {
        let mut keyed: Vec<(String, String)> = task_ids
            .iter()
            .map(|id| (hex(format!("{seed}:{id}").as_bytes()), id.clone()))
            .collect();
        keyed.sort();
        let scaled = (ratio * 1_000_000.0).round() as u64 * keyed.len() as u64;
        let n_train = ((scaled + 500_000) / 1_000_000) as usize;
        let train: BTreeSet<String> = keyed[..n_train].iter().map(|(_, id)| id.clone()).collect();
        let val: BTreeSet<String> = keyed[n_train..].iter().map(|(_, id)| id.clone()).collect();
        (train, val)
    };

    let mut seeds_checked = 0usize;
    for seed in 0..20u64 {
        let seeded = RunConfig {
            seed,
            ..config.clone()
        };
        let manifest = emit_corpus(&seeded).unwrap();

        // One record per final reflection, each task wholly in one split.
        let mut record_ids: BTreeSet<String> = BTreeSet::new();
        let mut tasks_by_split: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for (file, split) in [(TRAIN_FILE, "train"), (VAL_FILE, "val")] {
            for line in read_lines(file) {
                let record: SftRecord = serde_json::from_str(&line).unwrap();
                assert_eq!(
                    to_canonical_line(&record).unwrap(),
                    line,
                    "record does not round-trip byte-identically"
                );
                assert!(
                    record_ids.insert(record.id.clone()),
                    "duplicate record {}",
                    record.id
                );
                tasks_by_split
                    .entry(split)
                    .or_default()
                    .insert(record.meta.task_id);
            }
        }
        assert_eq!(
            record_ids, final_ids,
            "seed {seed}: records ≠ final reflections"
        );
        let train_tasks = tasks_by_split.remove("train").unwrap_or_default();
        let val_tasks = tasks_by_split.remove("val").unwrap_or_default();
        assert!(
            train_tasks.is_disjoint(&val_tasks),
            "seed {seed}: a task landed in both splits"
        );

        // Both flat views also round-trip.
        for file in [TRAIN_FLAT_FILE, VAL_FLAT_FILE] {
            for line in read_lines(file) {
                let record: FlatRecord = serde_json::from_str(&line).unwrap();
                assert_eq!(to_canonical_line(&record).unwrap(), line);
            }
        }

        // The split matches the independent oracle.
        let all_tasks: BTreeSet<String> = train_tasks.union(&val_tasks).cloned().collect();
        let (expected_train, expected_val) = expected_split(&all_tasks, seed, seeded.split_ratio);
        assert_eq!(
            train_tasks, expected_train,
            "seed {seed}: train split diverged"
        );
        assert_eq!(val_tasks, expected_val, "seed {seed}: val split diverged");
        assert_eq!(
            manifest
                .train_tasks
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>(),
            expected_train
        );
        assert_eq!(
            manifest.val_tasks.iter().cloned().collect::<BTreeSet<_>>(),
            expected_val
        );
        seeds_checked += 1;
    }
    pass(
        8,
        &format!(
            "{} records = {} final reflections, byte-identical round-trips, task-level split matched the shuffle oracle for {seeds_checked} seeds",
            final_ids.len(),
            final_ids.len()
        ),
    );
}

/// Criterion 9: the structured-output parsers give the contracted
/// accept/reject verdict on a 30-case suite of fenced, prefixed,
/// suffixed, and malformed payloads.
#[test]
fn c09_parser_robustness_suite() {
    enum Verdict {
        /// names, rationale
        Taxonomy(&'static [&'static str], &'static str),
        /// (error_type, critique) pairs
        Classified(&'static [(&'static str, &'static str)]),
        /// substring of the error message
        Reject(&'static str),
    }
    use Verdict::*;

    // (case name, parser, input, expected verdict); `parser` is "tax"
    // or "cls".
    let cases: [(&str, &str, &str, Verdict); 30] = [
        // --- taxonomy accepts ---
        (
            "tax plain object",
            "tax",
            r#"{"error_taxonomy": ["Budget Constraint Violation"], "rationale": "exceeds budget"}"#,
            Taxonomy(&["Budget Constraint Violation"], "exceeds budget"),
        ),
        (
            "tax fenced",
            "tax",
            "```json\n{\"error_taxonomy\": [\"A\", \"B\"], \"rationale\": \"r\"}\n```",
            Taxonomy(&["A", "B"], "r"),
        ),
        (
            "tax prefixed prose",
            "tax",
            "After reviewing all trials, here is the taxonomy:\n{\"error_taxonomy\": [\"A\"], \"rationale\": \"r\"}",
            Taxonomy(&["A"], "r"),
        ),
        (
            "tax suffixed prose",
            "tax",
            "{\"error_taxonomy\": [\"A\"], \"rationale\": \"r\"}\nLet me know if you need more detail.",
            Taxonomy(&["A"], "r"),
        ),
        (
            "tax junk braces skipped",
            "tax",
            "prose {not json} more prose {\"error_taxonomy\": [\"A\"], \"rationale\": \"r\"} tail",
            Taxonomy(&["A"], "r"),
        ),
        (
            "tax brackets inside strings",
            "tax",
            r#"{"error_taxonomy": ["Nested [x] {y} name"], "rationale": "keeps {braces} and [brackets]"}"#,
            Taxonomy(&["Nested [x] {y} name"], "keeps {braces} and [brackets]"),
        ),
        (
            "tax first object wins",
            "tax",
            "{\"error_taxonomy\": [\"First\"], \"rationale\": \"one\"} {\"error_taxonomy\": [\"Second\"], \"rationale\": \"two\"}",
            Taxonomy(&["First"], "one"),
        ),
        (
            "tax unicode and crlf",
            "tax",
            "解析:\r\n{\"error_taxonomy\": [\"Überschreitung des Budgets\"], \"rationale\": \"コスト超過\"}\r\n",
            Taxonomy(&["Überschreitung des Budgets"], "コスト超過"),
        ),
        // --- taxonomy rejects ---
        ("tax no json", "tax", "I could not produce a taxonomy this time.", Reject("no JSON object")),
        ("tax missing names key", "tax", r#"{"rationale": "x"}"#, Reject("error_taxonomy")),
        (
            "tax missing rationale key",
            "tax",
            r#"{"error_taxonomy": ["A"]}"#,
            Reject("rationale"),
        ),
        (
            "tax empty names",
            "tax",
            r#"{"error_taxonomy": [], "rationale": "x"}"#,
            Reject("empty"),
        ),
        (
            "tax names not an array",
            "tax",
            r#"{"error_taxonomy": "A", "rationale": "x"}"#,
            Reject("not an array"),
        ),
        (
            "tax non-string name",
            "tax",
            r#"{"error_taxonomy": ["A", 3], "rationale": "x"}"#,
            Reject("[1] is not a string"),
        ),
        (
            "tax non-string rationale",
            "tax",
            r#"{"error_taxonomy": ["A"], "rationale": 5}"#,
            Reject("\"rationale\" is not a string"),
        ),
        (
            "tax unclosed object",
            "tax",
            r#"{"error_taxonomy": ["A"], "rationale": "x""#,
            Reject("no JSON object"),
        ),
        // --- classification accepts ---
        ("cls empty array", "cls", "[]", Classified(&[])),
        (
            "cls single pair",
            "cls",
            r#"[{"error_type": "Budget Constraint Violation", "critique": "total exceeds 1900"}]"#,
            Classified(&[("Budget Constraint Violation", "total exceeds 1900")]),
        ),
        (
            "cls order preserved",
            "cls",
            r#"[{"error_type": "B", "critique": "second"}, {"error_type": "A", "critique": "first"}]"#,
            Classified(&[("B", "second"), ("A", "first")]),
        ),
        (
            "cls fenced with prose",
            "cls",
            "The step violates one constraint.\n```json\n[{\"error_type\": \"A\", \"critique\": \"c\"}]\n```\nDone.",
            Classified(&[("A", "c")]),
        ),
        (
            "cls junk bracket skipped",
            "cls",
            "scores [not json either] then [{\"error_type\": \"A\", \"critique\": \"c\"}]",
            Classified(&[("A", "c")]),
        ),
        (
            "cls extra keys ignored",
            "cls",
            r#"[{"error_type": "A", "critique": "c", "confidence": 0.9}]"#,
            Classified(&[("A", "c")]),
        ),
        (
            "cls fenced empty array",
            "cls",
            "No errors found at this step.\n```\n[]\n```",
            Classified(&[]),
        ),
        // --- classification rejects ---
        ("cls no array", "cls", "the step looks fine", Reject("no JSON array")),
        (
            "cls missing critique",
            "cls",
            r#"[{"error_type": "X"}]"#,
            Reject("element 0 missing key \"critique\""),
        ),
        (
            "cls second element missing type",
            "cls",
            r#"[{"error_type": "X", "critique": "c"}, {"critique": "y"}]"#,
            Reject("element 1 missing key \"error_type\""),
        ),
        (
            "cls element not an object",
            "cls",
            r#"["just a string"]"#,
            Reject("element 0 is not an object"),
        ),
        (
            "cls non-string type",
            "cls",
            r#"[{"error_type": 7, "critique": "c"}]"#,
            Reject("\"error_type\" is not a string"),
        ),
        (
            "cls non-string critique",
            "cls",
            r#"[{"error_type": "A", "critique": {"text": "c"}}]"#,
            Reject("\"critique\" is not a string"),
        ),
        (
            "cls unclosed array",
            "cls",
            r#"[{"error_type": "A", "critique": "c"}"#,
            Reject("no JSON array"),
        ),
    ];

    let mut passed = 0usize;
    for (name, parser, input, expected) in &cases {
        match (*parser, expected) {
            ("tax", Taxonomy(names, rationale)) => {
                let out = parse_taxonomy_output(input)
                    .unwrap_or_else(|e| panic!("case {name:?} should parse: {e}"));
                assert_eq!(out.names, *names, "case {name:?}");
                assert_eq!(out.rationale, *rationale, "case {name:?}");
            }
            ("tax", Reject(detail)) => {
                let err = parse_taxonomy_output(input)
                    .expect_err(&format!("case {name:?} should be rejected"));
                assert!(err.to_string().contains(detail), "case {name:?}: {err}");
            }
            ("cls", Classified(pairs)) => {
                let out = parse_classification_output(input)
                    .unwrap_or_else(|e| panic!("case {name:?} should parse: {e}"));
                let got: Vec<(&str, &str)> = out
                    .iter()
                    .map(|c| (c.error_type.as_str(), c.critique.as_str()))
                    .collect();
                assert_eq!(got, *pairs, "case {name:?}");
            }
            ("cls", Reject(detail)) => {
                let err = parse_classification_output(input)
                    .expect_err(&format!("case {name:?} should be rejected"));
                assert!(err.to_string().contains(detail), "case {name:?}: {err}");
            }
            other => panic!("malformed case table entry {other:?}", other = other.0),
        }
        passed += 1;
    }
    assert_eq!(passed, 30);
    pass(
        9,
        "both structured-output parsers gave the contracted verdict on all 30 cases",
    );
}

/// Criterion 10: under each reference policy, the reference plan appears
/// in exactly the prompts the policy mandates — trial reflections only,
/// trial reflections and per-step classification, or neither.
#[test]
fn c10_reference_policy_ablation() {
    // Anchors are the template lines that precede the injected reference.
    const SINGLE_ANCHOR: &str = "Valid plan: ";
    const INTRA_ANCHOR: &str = "Valid Plan:\n";

    for policy in [
        ReferencePolicy::None,
        ReferencePolicy::SingleOnly,
        ReferencePolicy::SingleAndIntra,
    ] {
        let root = tempfile::tempdir().unwrap();
        let config = RunConfig {
            reference_policy: policy,
            ..prepared_config(root.path(), "synthesize.json", "runs/toy")
        };
        run_pipeline(config.clone()).unwrap();

        let references: Vec<String> = fixtures::build_tasks()
            .unwrap()
            .into_iter()
            .map(|t| t.reference_plan)
            .collect();
        let audit = read_audit(&config.run_dir.join("audit.jsonl")).unwrap();
        let mut single_prompts = 0usize;
        let mut intra_prompts = 0usize;
        for entry in &audit {
            let single_hit = entry.prompt.contains(SINGLE_ANCHOR);
            let intra_hit = entry.prompt.contains(INTRA_ANCHOR);
            match entry.role {
                PromptRole::ReflectSingle => {
                    single_prompts += 1;
                    assert_eq!(
                        single_hit,
                        policy.reference_in_single(),
                        "{policy:?}: trial-reflection prompt reference presence is wrong"
                    );
                    if single_hit {
                        assert!(
                            references
                                .iter()
                                .any(|r| entry.prompt.contains(&format!("{SINGLE_ANCHOR}{r}"))),
                            "{policy:?}: anchor present but not followed by a reference plan"
                        );
                    }
                    assert!(!intra_hit);
                }
                PromptRole::ErrorClassify => {
                    intra_prompts += 1;
                    assert_eq!(
                        intra_hit,
                        policy.reference_in_intra(),
                        "{policy:?}: classification prompt reference presence is wrong"
                    );
                    if intra_hit {
                        assert!(
                            references
                                .iter()
                                .any(|r| entry.prompt.contains(&format!("{INTRA_ANCHOR}{r}"))),
                            "{policy:?}: anchor present but not followed by a reference plan"
                        );
                    }
                    assert!(!single_hit);
                }
                _ => {
                    assert!(
                        !single_hit && !intra_hit,
                        "{policy:?}: reference block leaked into a {:?} prompt",
                        entry.role
                    );
                }
            }
        }
        assert!(single_prompts > 0 && intra_prompts > 0);
    }
    pass(
        10,
        "reference plan appeared in exactly the mandated prompts under none, single_only, and single_and_intra",
    );
}
