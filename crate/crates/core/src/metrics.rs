//! Evaluation metrics over per-trial run records: success rate, missed
//! milestone ratio, error-aware precision / milestone recall with their
//! weighted harmonic mean, trial-and-error ratio, and the combinatorial
//! pass^k estimator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::Trajectory;

/// Recall-weighted default for the harmonic mean: missing milestones is
/// considered worse than occasional action errors.
pub const DEFAULT_BETA: f64 = 5.0;

/// Outcome record for one trial of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub trial_id: String,
    pub solved: bool,
    pub milestones_total: u32,
    pub milestones_missed: u32,
    pub action_count: u32,
    pub error_count: u32,
    /// Solved, but only after at least one tool-call error.
    pub trial_and_error_success: bool,
}

impl From<&Trajectory> for RunRecord {
    fn from(t: &Trajectory) -> Self {
        let a = t.annotation;
        RunRecord {
            task_id: t.task_id.clone(),
            trial_id: t.trial_id.clone(),
            solved: a.solved,
            milestones_total: a.milestones_total,
            milestones_missed: a.milestones_missed,
            action_count: a.action_count,
            error_count: a.error_count,
            trial_and_error_success: a.solved && a.error_count > 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metric requires at least one run")]
    EmptyRuns,
    #[error("task {task_id} has {trials} trial(s), fewer than k = {k}")]
    InsufficientTrials { task_id: String, trials: usize, k: usize },
}

/// Fraction of solved runs.
pub fn success_rate(runs: &[RunRecord]) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let solved = runs.iter().filter(|r| r.solved).count();
    Ok(solved as f64 / runs.len() as f64)
}

/// Mean over runs of missed / total milestones.
pub fn missed_milestone_ratio(runs: &[RunRecord]) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let sum: f64 = runs
        .iter()
        .map(|r| f64::from(r.milestones_missed) / f64::from(r.milestones_total))
        .sum();
    Ok(sum / runs.len() as f64)
}

/// Error-aware precision and milestone recall for one run. With zero actions
/// there are zero errors, so precision is 1.0 by convention.
pub fn precision_recall(r: &RunRecord) -> (f64, f64) {
    let recall =
        f64::from(r.milestones_total - r.milestones_missed) / f64::from(r.milestones_total);
    let precision = if r.action_count == 0 {
        1.0
    } else {
        f64::from(r.action_count - r.error_count) / f64::from(r.action_count)
    };
    (precision, recall)
}

/// Weighted harmonic mean of precision and recall; beta > 1 emphasizes
/// recall. Zero denominator yields 0.0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let beta_sq = beta * beta;
    let denominator = beta_sq * precision + recall;
    if denominator == 0.0 {
        return 0.0;
    }
    (1.0 + beta_sq) * precision * recall / denominator
}

/// Mean of per-run f_beta scores.
pub fn f_beta_mean(runs: &[RunRecord], beta: f64) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let sum: f64 = runs
        .iter()
        .map(|r| {
            let (p, rec) = precision_recall(r);
            f_beta(p, rec, beta)
        })
        .sum();
    Ok(sum / runs.len() as f64)
}

/// f_beta over corpus-pooled precision and recall, for comparison with the
/// per-run mean.
pub fn f_beta_pooled(runs: &[RunRecord], beta: f64) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let total_actions: u64 = runs.iter().map(|r| u64::from(r.action_count)).sum();
    let total_errors: u64 = runs.iter().map(|r| u64::from(r.error_count)).sum();
    let total_milestones: u64 = runs.iter().map(|r| u64::from(r.milestones_total)).sum();
    let total_missed: u64 = runs.iter().map(|r| u64::from(r.milestones_missed)).sum();
    let precision = if total_actions == 0 {
        1.0
    } else {
        (total_actions - total_errors) as f64 / total_actions as f64
    };
    let recall = (total_milestones - total_missed) as f64 / total_milestones as f64;
    Ok(f_beta(precision, recall, beta))
}

/// Proportion of trial-and-error successes among all successful trials.
/// `None` when there are no successes: reporting 0 there would falsely
/// signal perfect one-shot behavior.
pub fn te_ratio(runs: &[RunRecord]) -> Option<f64> {
    let solved = runs.iter().filter(|r| r.solved).count();
    if solved == 0 {
        return None;
    }
    let trial_and_error = runs
        .iter()
        .filter(|r| r.trial_and_error_success)
        .count();
    Some(trial_and_error as f64 / solved as f64)
}

/// Exact binomial coefficient via the multiplicative formula; every
/// intermediate division is exact.
fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 1..=k {
        result = result * u128::from(n - k + i) / u128::from(i);
    }
    result
}

/// Unbiased estimator of the probability that k i.i.d. trials of a task all
/// succeed, averaged across tasks: per task with n trials and c successes
/// the contribution is C(c,k)/C(n,k).
pub fn pass_hat_k(runs: &[RunRecord], k: usize) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let mut per_task: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in runs {
        let entry = per_task.entry(&r.task_id).or_insert((0, 0));
        entry.0 += 1;
        if r.solved {
            entry.1 += 1;
        }
    }
    let mut sum = 0.0;
    for (task_id, (n, c)) in &per_task {
        if (*n as usize) < k {
            return Err(MetricsError::InsufficientTrials {
                task_id: (*task_id).to_string(),
                trials: *n as usize,
                k,
            });
        }
        sum += binomial(*c, k as u64) as f64 / binomial(*n, k as u64) as f64;
    }
    Ok(sum / per_task.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(task: &str, trial: &str, solved: bool, m: u32, miss: u32, a: u32, e: u32) -> RunRecord {
        RunRecord {
            task_id: task.into(),
            trial_id: trial.into(),
            solved,
            milestones_total: m,
            milestones_missed: miss,
            action_count: a,
            error_count: e,
            trial_and_error_success: solved && e > 0,
        }
    }

    #[test]
    fn success_rate_is_the_solved_fraction() {
        let runs: Vec<RunRecord> = (0..10)
            .map(|i| run("t", &i.to_string(), i < 8, 1, 0, 1, 0))
            .collect();
        assert_eq!(success_rate(&runs).unwrap(), 0.8);
    }

    #[test]
    fn all_solved_is_one() {
        let runs = vec![run("t", "0", true, 1, 0, 1, 0)];
        assert_eq!(success_rate(&runs).unwrap(), 1.0);
    }

    #[test]
    fn synthetic_88_of_100() {
        let runs: Vec<RunRecord> = (0..100)
            .map(|i| run(&format!("t{i}"), "0", i < 88, 1, 0, 1, 0))
            .collect();
        assert!((success_rate(&runs).unwrap() - 0.88).abs() < 1e-12);
    }

    #[test]
    fn empty_runs_error() {
        assert_eq!(success_rate(&[]), Err(MetricsError::EmptyRuns));
        assert_eq!(missed_milestone_ratio(&[]), Err(MetricsError::EmptyRuns));
    }

    #[test]
    fn mmr_single_run() {
        let runs = vec![run("t", "0", true, 4, 1, 1, 0)];
        assert_eq!(missed_milestone_ratio(&runs).unwrap(), 0.25);
    }

    #[test]
    fn mmr_zero_when_nothing_missed() {
        let runs = vec![run("t", "0", true, 4, 0, 1, 0), run("t", "1", true, 2, 0, 1, 0)];
        assert_eq!(missed_milestone_ratio(&runs).unwrap(), 0.0);
    }

    #[test]
    fn mmr_matches_fold_oracle() {
        let runs = vec![run("t", "0", true, 4, 1, 1, 0), run("t", "1", true, 2, 1, 1, 0)];
        let oracle = runs
            .iter()
            .fold(0.0, |acc, r| acc + f64::from(r.milestones_missed) / f64::from(r.milestones_total))
            / runs.len() as f64;
        assert_eq!(missed_milestone_ratio(&runs).unwrap(), oracle);
        assert!((oracle - 0.375).abs() < 1e-12);
    }

    #[test]
    fn precision_recall_direct_substitution() {
        let r = run("t", "0", true, 5, 1, 10, 2);
        assert_eq!(precision_recall(&r), (0.8, 0.8));
    }

    #[test]
    fn perfect_run_scores_ones() {
        let r = run("t", "0", true, 3, 0, 4, 0);
        assert_eq!(precision_recall(&r), (1.0, 1.0));
    }

    #[test]
    fn zero_actions_precision_convention() {
        let r = run("t", "0", false, 3, 3, 0, 0);
        assert_eq!(precision_recall(&r).0, 1.0);
    }

    #[test]
    fn f_beta_identity_at_ones() {
        for beta in [0.5, 1.0, 5.0] {
            assert_eq!(f_beta(1.0, 1.0, beta), 1.0);
        }
    }

    #[test]
    fn f_beta_worked_value() {
        // 26 * 0.5 / (25 * 0.5 + 1.0) = 13 / 13.5
        let expected = 13.0 / 13.5;
        assert!((f_beta(0.5, 1.0, 5.0) - expected).abs() <= 1e-12);
    }

    #[test]
    fn f_beta_zero_denominator() {
        assert_eq!(f_beta(0.0, 0.0, 5.0), 0.0);
    }

    #[test]
    fn te_ratio_counts_recovered_successes() {
        let mut runs: Vec<RunRecord> = (0..7).map(|i| run("t", &i.to_string(), true, 1, 0, 1, 0)).collect();
        runs.extend((7..10).map(|i| run("t", &i.to_string(), true, 1, 0, 2, 1)));
        assert_eq!(te_ratio(&runs), Some(0.3));
    }

    #[test]
    fn te_ratio_zero_when_all_one_shot() {
        let runs = vec![run("t", "0", true, 1, 0, 1, 0)];
        assert_eq!(te_ratio(&runs), Some(0.0));
    }

    #[test]
    fn te_ratio_undefined_without_successes() {
        let runs = vec![run("t", "0", false, 1, 1, 1, 1)];
        assert_eq!(te_ratio(&runs), None);
    }

    fn task_runs(task: &str, n: usize, c: usize) -> Vec<RunRecord> {
        (0..n).map(|i| run(task, &i.to_string(), i < c, 1, 0, 1, 0)).collect()
    }

    #[test]
    fn pass_hat_k_all_success() {
        let runs = task_runs("t", 3, 3);
        for k in 1..=3 {
            assert_eq!(pass_hat_k(&runs, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn pass_hat_k_two_of_three() {
        let runs = task_runs("t", 3, 2);
        assert!((pass_hat_k(&runs, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((pass_hat_k(&runs, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pass_hat_k(&runs, 3).unwrap(), 0.0);
    }

    #[test]
    fn pass_hat_k_requires_enough_trials() {
        let runs = task_runs("short", 2, 2);
        assert_eq!(
            pass_hat_k(&runs, 3),
            Err(MetricsError::InsufficientTrials {
                task_id: "short".into(),
                trials: 2,
                k: 3
            })
        );
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(4, 5), 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn f_beta_bounded_and_recall_monotone(
                p in 0.0f64..=1.0,
                r1 in 0.0f64..=1.0,
                r2 in 0.0f64..=1.0,
                beta in 0.1f64..10.0,
            ) {
                let f1 = f_beta(p, r1, beta);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&f1));
                if p > 0.0 && r1 < r2 {
                    prop_assert!(f1 < f_beta(p, r2, beta));
                }
            }

            #[test]
            fn f_beta_swap_symmetry(
                p in 0.01f64..=1.0,
                r in 0.01f64..=1.0,
                beta in 0.1f64..10.0,
            ) {
                let lhs = f_beta(p, r, beta);
                let rhs = f_beta(r, p, 1.0 / beta);
                prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
            }

            #[test]
            fn aggregates_are_permutation_invariant(seed in 0u64..1000) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut runs: Vec<RunRecord> = (0..12).map(|i| RunRecord {
                    task_id: format!("t{}", i % 3),
                    trial_id: i.to_string(),
                    solved: i % 2 == 0,
                    milestones_total: 4,
                    milestones_missed: (i % 3) as u32,
                    action_count: 5,
                    error_count: (i % 4) as u32,
                    trial_and_error_success: i % 2 == 0 && i % 4 != 0,
                }).collect();
                let sr = success_rate(&runs).unwrap();
                let mmr = missed_milestone_ratio(&runs).unwrap();
                let fb = f_beta_mean(&runs, 5.0).unwrap();
                let p2 = pass_hat_k(&runs, 2).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                runs.shuffle(&mut rng);
                prop_assert!((success_rate(&runs).unwrap() - sr).abs() <= 1e-12);
                prop_assert!((missed_milestone_ratio(&runs).unwrap() - mmr).abs() <= 1e-12);
                prop_assert!((f_beta_mean(&runs, 5.0).unwrap() - fb).abs() <= 1e-12);
                prop_assert!((pass_hat_k(&runs, 2).unwrap() - p2).abs() <= 1e-12);
            }

            #[test]
            fn pass_hat_1_equals_success_rate_with_equal_trials(
                successes in proptest::collection::vec(0usize..=4, 1..6),
            ) {
                let runs: Vec<RunRecord> = successes.iter().enumerate().flat_map(|(task, &c)| {
                    (0..4).map(move |i| RunRecord {
                        task_id: format!("t{task}"),
                        trial_id: i.to_string(),
                        solved: i < c,
                        milestones_total: 1,
                        milestones_missed: 0,
                        action_count: 1,
                        error_count: 0,
                        trial_and_error_success: false,
                    })
                }).collect();
                let lhs = pass_hat_k(&runs, 1).unwrap();
                let rhs = success_rate(&runs).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }
}
