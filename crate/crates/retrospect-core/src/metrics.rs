//! Evaluation metrics. Percentages are reported with two decimals, rounded
//! half-up with integer arithmetic so results never depend on float
//! rounding at the .005 boundary.

use std::collections::BTreeMap;

use crate::config::ReductionFormula;
use crate::error::{Error, Result};
use crate::model::ErrorPath;

/// `numerator / denominator`, as a percentage with two decimals, half-up.
pub fn percent2(numerator: u64, denominator: u64) -> Result<f64> {
    if denominator == 0 {
        return Err(Error::invalid("metric", "denominator is zero"));
    }
    let scaled = numerator
        .checked_mul(10_000)
        .ok_or_else(|| Error::invalid("metric", "numerator too large"))?;
    let mut q = scaled / denominator;
    if (scaled % denominator) * 2 >= denominator {
        q += 1;
    }
    Ok(q as f64 / 100.0)
}

/// `numerator / denominator`, as a ratio with two decimals, half-up, at or
/// above zero.
fn ratio2(numerator: i64, denominator: u64) -> Result<f64> {
    if denominator == 0 {
        return Err(Error::invalid("metric", "denominator is zero"));
    }
    if numerator <= 0 {
        return Ok(0.0);
    }
    let scaled = (numerator as u64)
        .checked_mul(100)
        .ok_or_else(|| Error::invalid("metric", "numerator too large"))?;
    let mut q = scaled / denominator;
    if (scaled % denominator) * 2 >= denominator {
        q += 1;
    }
    Ok(q as f64 / 100.0)
}

/// Share of solved tasks, in percent.
pub fn pass_rate(passed: usize, total: usize) -> Result<f64> {
    percent2(passed as u64, total as u64)
}

/// Normalize text for exact-match comparison: LF endings, per-line trailing
/// whitespace trimmed, runs of blank lines collapsed to one, and no
/// leading/trailing blank lines.
pub fn normalize_for_em(text: &str) -> String {
    let unified = text.replace("\r\n", "\n");
    let mut lines: Vec<&str> = Vec::new();
    let mut blank_run = false;
    for line in unified.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run = true;
            continue;
        }
        if blank_run && !lines.is_empty() {
            lines.push("");
        }
        blank_run = false;
        lines.push(line);
    }
    lines.join("\n")
}

/// Share of (prediction, reference) pairs that match exactly after
/// normalization, in percent.
pub fn em_accuracy(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("metric", "no pairs to compare"));
    }
    let matched = pairs
        .iter()
        .filter(|(a, b)| normalize_for_em(a) == normalize_for_em(b))
        .count();
    percent2(matched as u64, pairs.len() as u64)
}

fn label_counts(paths: &[ErrorPath]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for path in paths {
        for label in &path.labels {
            *counts.entry(label.error_type.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Error reduction between a before and an after pool of error paths.
///
/// * `LabelCount`: `max(0, (B - A) / B)` over total label counts.
/// * `PerType`: the same ratio per error type present before, averaged.
///
/// `B = 0` (no labels before) is an error: there is nothing to reduce.
pub fn error_reduction(
    before: &[ErrorPath],
    after: &[ErrorPath],
    formula: ReductionFormula,
) -> Result<f64> {
    let before_counts = label_counts(before);
    let after_counts = label_counts(after);
    let total_before: u64 = before_counts.values().sum();
    if total_before == 0 {
        return Err(Error::invalid(
            "metric",
            "error reduction is undefined: no labels before",
        ));
    }
    match formula {
        ReductionFormula::LabelCount => {
            let total_after: u64 = after_counts.values().sum();
            ratio2(total_before as i64 - total_after as i64, total_before)
        }
        ReductionFormula::PerType => {
            // Mean over types of max(0, B_e - A_e) / B_e. Terms are summed
            // in 10^6 fixed point and the mean rounded half-up once.
            let n = before_counts.len() as u64;
            let mut sum_fixed: u64 = 0;
            for (ty, b) in &before_counts {
                let a = after_counts.get(ty).copied().unwrap_or(0);
                if a >= *b {
                    continue;
                }
                sum_fixed += (b - a) * 1_000_000 / b;
            }
            let denom = n * 10_000;
            let mut q = sum_fixed / denom;
            if (sum_fixed % denom) * 2 >= denom {
                q += 1;
            }
            Ok(q as f64 / 100.0)
        }
    }
}

/// Cumulative share of tasks solved by each trial, in percent.
///
/// `pass_trial[i]` is the first passing trial of task i (None = never).
pub fn trial_curve(pass_trials: &[Option<u32>], budget: u32) -> Result<Vec<f64>> {
    if pass_trials.is_empty() {
        return Err(Error::invalid("metric", "no tasks for the trial curve"));
    }
    if budget == 0 {
        return Err(Error::invalid("metric", "trial budget is zero"));
    }
    let total = pass_trials.len() as u64;
    (1..=budget)
        .map(|t| {
            let solved = pass_trials
                .iter()
                .filter(|p| matches!(p, Some(k) if *k <= t))
                .count() as u64;
            percent2(solved, total)
        })
        .collect()
}

/// Render the trial curve as CSV with a `trial,pass_rate` header.
pub fn trial_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("trial,pass_rate\n");
    for (i, rate) in curve.iter().enumerate() {
        out.push_str(&format!("{},{rate:.2}\n", i + 1));
    }
    out
}
