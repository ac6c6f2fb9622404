//! Outcome triage and contrastive evidence construction.
//!
//! Each task's trajectories are partitioned into clean successes (solved,
//! zero tool-call errors), recovered successes (solved despite errors), and
//! failures. Success anchors are paired with recovered/failed foils into
//! contrast blocks whose rendered text makes the outcome-determining
//! differences explicit for the workflow inducer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::Trajectory;
use crate::llm_adapter::{ChatProvider, ChatRequest, ProviderError, RequestTag, TEST_TEMPERATURE};
use crate::prompts::{PromptKind, PromptSet};

/// Summary used when a bundle contains no user-role messages.
pub const EMPTY_SUMMARY_SENTINEL: &str = "no user request observed";

/// Default cap on contrast pairs per bundle, chosen for prompt-budget control.
pub const DEFAULT_MAX_PAIRS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    CleanSuccess,
    RecoveredSuccess,
    Failure,
}

impl OutcomeClass {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeClass::CleanSuccess => "clean_success",
            OutcomeClass::RecoveredSuccess => "recovered_success",
            OutcomeClass::Failure => "failure",
        }
    }
}

/// All trajectories collected for one task, partitioned by outcome.
/// Partition values are trial ids; the summary is filled by
/// [`summarize_task`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub partition: BTreeMap<OutcomeClass, Vec<String>>,
    pub summary: Option<String>,
}

/// A success anchor concatenated with a recovered/failed foil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastBlock {
    pub anchor_trial: String,
    pub foil_trial: String,
    pub rendered: String,
}

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("bundle for task {expected} contains trajectory {trial_id} from task {found}")]
    MixedTasks {
        expected: String,
        found: String,
        trial_id: String,
    },
    #[error("cannot build a bundle from zero trajectories")]
    EmptyBundle,
    #[error("task {task_id} has no successful trajectory; induction skipped")]
    InductionSkipped { task_id: String },
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
}

/// Classifies one trajectory from its terminal annotation.
pub fn classify(t: &Trajectory) -> OutcomeClass {
    match (t.annotation.solved, t.annotation.error_count) {
        (true, 0) => OutcomeClass::CleanSuccess,
        (true, _) => OutcomeClass::RecoveredSuccess,
        (false, _) => OutcomeClass::Failure,
    }
}

/// Groups trajectories into a bundle, partitioned by outcome class.
pub fn build_bundle(
    task_id: impl Into<String>,
    trajectories: Vec<Trajectory>,
) -> Result<TaskBundle, TriageError> {
    let task_id = task_id.into();
    if trajectories.is_empty() {
        return Err(TriageError::EmptyBundle);
    }
    for t in &trajectories {
        if t.task_id != task_id {
            return Err(TriageError::MixedTasks {
                expected: task_id,
                found: t.task_id.clone(),
                trial_id: t.trial_id.clone(),
            });
        }
    }
    let mut partition: BTreeMap<OutcomeClass, Vec<String>> = BTreeMap::new();
    partition.insert(OutcomeClass::CleanSuccess, Vec::new());
    partition.insert(OutcomeClass::RecoveredSuccess, Vec::new());
    partition.insert(OutcomeClass::Failure, Vec::new());
    for t in &trajectories {
        partition
            .entry(classify(t))
            .or_default()
            .push(t.trial_id.clone());
    }
    Ok(TaskBundle {
        task_id,
        trajectories,
        partition,
        summary: None,
    })
}

impl TaskBundle {
    pub fn trajectory(&self, trial_id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.trial_id == trial_id)
    }

    pub fn class_count(&self, class: OutcomeClass) -> usize {
        self.partition.get(&class).map_or(0, Vec::len)
    }

    /// The trajectory the inducer treats as the canonical success: the first
    /// clean success by trial id, falling back to the recovered success with
    /// the fewest errors (ties: fewest events, then trial id).
    pub fn anchor(&self) -> Option<&Trajectory> {
        anchors_in(self).into_iter().next()
    }
}

/// Anchor candidates in deterministic order. Clean successes sorted by trial
/// id; if none exist, the single fallback recovered success.
fn anchors_in(bundle: &TaskBundle) -> Vec<&Trajectory> {
    let mut cleans: Vec<&Trajectory> = bundle
        .trajectories
        .iter()
        .filter(|t| classify(t) == OutcomeClass::CleanSuccess)
        .collect();
    cleans.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    if !cleans.is_empty() {
        return cleans;
    }
    let mut recovered: Vec<&Trajectory> = bundle
        .trajectories
        .iter()
        .filter(|t| classify(t) == OutcomeClass::RecoveredSuccess)
        .collect();
    recovered.sort_by(|a, b| {
        a.annotation
            .error_count
            .cmp(&b.annotation.error_count)
            .then(a.events.len().cmp(&b.events.len()))
            .then(a.trial_id.cmp(&b.trial_id))
    });
    recovered.into_iter().take(1).collect()
}

/// Renders one trajectory as a labeled section, one event per line.
pub fn render_trajectory_section(label: &str, t: &Trajectory) -> String {
    let mut out = format!("=== {} ({}, trial {}) ===\n", label, classify(t).label(), t.trial_id);
    for event in &t.events {
        out.push_str(&event.render_line());
        out.push('\n');
    }
    out
}

/// Builds contrast blocks: anchors paired with foils, anchor section first.
///
/// Foils are ordered by (class: recovered before failure, event count
/// ascending, trial id); anchors by trial id. Pairs are enumerated foil-major
/// so near-miss evidence fills the cap first. With no foils available the
/// result is empty (anchor-only induction); with no successes at all the
/// bundle is not inducible.
pub fn make_contrasts(
    bundle: &TaskBundle,
    max_pairs: usize,
) -> Result<Vec<ContrastBlock>, TriageError> {
    let anchors = anchors_in(bundle);
    let Some(fallback_anchor) = anchors.first() else {
        return Err(TriageError::InductionSkipped {
            task_id: bundle.task_id.clone(),
        });
    };
    let anchor_ids: Vec<&str> = anchors.iter().map(|t| t.trial_id.as_str()).collect();

    let mut foils: Vec<&Trajectory> = bundle
        .trajectories
        .iter()
        .filter(|t| {
            let class = classify(t);
            (class == OutcomeClass::RecoveredSuccess || class == OutcomeClass::Failure)
                && t.trial_id != fallback_anchor.trial_id
        })
        .collect();
    foils.sort_by(|a, b| {
        classify(a)
            .cmp(&classify(b))
            .then(a.events.len().cmp(&b.events.len()))
            .then(a.trial_id.cmp(&b.trial_id))
    });

    let mut blocks = Vec::new();
    'outer: for foil in &foils {
        for anchor_id in &anchor_ids {
            if blocks.len() >= max_pairs {
                break 'outer;
            }
            let anchor = bundle.trajectory(anchor_id).expect("anchor in bundle");
            let mut rendered = render_trajectory_section("ANCHOR", anchor);
            rendered.push_str(&render_trajectory_section("FOIL", foil));
            blocks.push(ContrastBlock {
                anchor_trial: anchor_id.to_string(),
                foil_trial: foil.trial_id.clone(),
                rendered,
            });
        }
    }
    Ok(blocks)
}

/// Produces the task summary from user-role messages only, via the
/// task-summarization prompt, and stores it on the bundle.
pub fn summarize_task(
    bundle: &mut TaskBundle,
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
) -> Result<String, TriageError> {
    let mut messages: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for t in &bundle.trajectories {
        for message in t.user_messages() {
            if seen.insert(message.clone()) {
                messages.push(message);
            }
        }
    }
    let summary = if messages.is_empty() {
        EMPTY_SUMMARY_SENTINEL.to_string()
    } else {
        let prompt = prompts.render(
            PromptKind::TaskSummarize,
            &[("user_messages", &messages.join("\n"))],
        );
        let request = ChatRequest::user_prompt(RequestTag::Summarize, prompt, TEST_TEMPERATURE);
        provider.chat(&request)?.trim().to_string()
    };
    bundle.summary = Some(summary.clone());
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{Event, TerminalAnnotation};
    use crate::llm_adapter::ScriptedChat;
    use std::collections::BTreeMap as Map;

    fn trajectory(task: &str, trial: &str, solved: bool, errors: u32, extra_events: usize) -> Trajectory {
        let mut events = vec![Event::user_message(0, "please handle my request")];
        for i in 0..extra_events {
            events.push(Event::assistant_message(i + 1, "working"));
        }
        Trajectory {
            task_id: task.into(),
            trial_id: trial.into(),
            events,
            annotation: TerminalAnnotation {
                solved,
                milestones_total: 2,
                milestones_missed: if solved { 0 } else { 1 },
                action_count: errors + 1,
                error_count: errors,
            },
        }
    }

    #[test]
    fn classify_matches_definitions() {
        assert_eq!(classify(&trajectory("T", "a", true, 0, 0)), OutcomeClass::CleanSuccess);
        assert_eq!(classify(&trajectory("T", "b", true, 2, 0)), OutcomeClass::RecoveredSuccess);
        assert_eq!(classify(&trajectory("T", "c", false, 0, 0)), OutcomeClass::Failure);
    }

    #[test]
    fn bundle_partition_counts() {
        let ts: Vec<Trajectory> = (0..4)
            .map(|i| trajectory("T", &format!("clean{i}"), true, 0, 0))
            .chain((0..3).map(|i| trajectory("T", &format!("rec{i}"), true, 1, 0)))
            .chain((0..3).map(|i| trajectory("T", &format!("fail{i}"), false, 0, 0)))
            .collect();
        let bundle = build_bundle("T", ts).unwrap();
        assert_eq!(bundle.class_count(OutcomeClass::CleanSuccess), 4);
        assert_eq!(bundle.class_count(OutcomeClass::RecoveredSuccess), 3);
        assert_eq!(bundle.class_count(OutcomeClass::Failure), 3);
    }

    #[test]
    fn single_clean_bundle() {
        let bundle = build_bundle("T", vec![trajectory("T", "a", true, 0, 0)]).unwrap();
        assert_eq!(bundle.class_count(OutcomeClass::CleanSuccess), 1);
        assert_eq!(bundle.class_count(OutcomeClass::RecoveredSuccess), 0);
        assert_eq!(bundle.class_count(OutcomeClass::Failure), 0);
    }

    #[test]
    fn mixed_tasks_rejected() {
        let err = build_bundle(
            "T",
            vec![trajectory("T", "a", true, 0, 0), trajectory("U", "b", true, 0, 0)],
        );
        assert!(matches!(err, Err(TriageError::MixedTasks { .. })));
    }

    #[test]
    fn contrasts_enumerate_all_pairs_under_cap() {
        let bundle = build_bundle(
            "T",
            vec![
                trajectory("T", "c1", true, 0, 0),
                trajectory("T", "c2", true, 0, 0),
                trajectory("T", "r1", true, 1, 0),
                trajectory("T", "f1", false, 0, 0),
            ],
        )
        .unwrap();
        let blocks = make_contrasts(&bundle, 4).unwrap();
        assert_eq!(blocks.len(), 4);
        // Foil-major: the recovered foil (near miss) fills the cap first.
        let pairs: Vec<(&str, &str)> = blocks
            .iter()
            .map(|b| (b.anchor_trial.as_str(), b.foil_trial.as_str()))
            .collect();
        assert_eq!(pairs, vec![("c1", "r1"), ("c2", "r1"), ("c1", "f1"), ("c2", "f1")]);
    }

    #[test]
    fn anchor_only_bundle_yields_zero_blocks() {
        let bundle = build_bundle("T", vec![trajectory("T", "c1", true, 0, 0)]).unwrap();
        assert!(make_contrasts(&bundle, 4).unwrap().is_empty());
    }

    #[test]
    fn recovered_success_becomes_fallback_anchor() {
        let bundle = build_bundle(
            "T",
            vec![trajectory("T", "r1", true, 2, 0), trajectory("T", "f1", false, 0, 0)],
        )
        .unwrap();
        let blocks = make_contrasts(&bundle, 4).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].anchor_trial, "r1");
        assert_eq!(blocks[0].foil_trial, "f1");
    }

    #[test]
    fn no_successes_signals_induction_skipped() {
        let bundle = build_bundle("T", vec![trajectory("T", "f1", false, 0, 0)]).unwrap();
        assert!(matches!(
            make_contrasts(&bundle, 4),
            Err(TriageError::InductionSkipped { .. })
        ));
    }

    #[test]
    fn rendered_block_puts_anchor_before_foil() {
        let bundle = build_bundle(
            "T",
            vec![trajectory("T", "c1", true, 0, 0), trajectory("T", "f1", false, 0, 0)],
        )
        .unwrap();
        let blocks = make_contrasts(&bundle, 1).unwrap();
        let rendered = &blocks[0].rendered;
        let anchor_at = rendered.find("=== ANCHOR").unwrap();
        let foil_at = rendered.find("=== FOIL").unwrap();
        assert!(anchor_at < foil_at);
    }

    #[test]
    fn shorter_foils_come_first() {
        let bundle = build_bundle(
            "T",
            vec![
                trajectory("T", "c1", true, 0, 0),
                trajectory("T", "long", false, 0, 5),
                trajectory("T", "short", false, 0, 1),
            ],
        )
        .unwrap();
        let blocks = make_contrasts(&bundle, 4).unwrap();
        let foils: Vec<&str> = blocks.iter().map(|b| b.foil_trial.as_str()).collect();
        assert_eq!(foils, vec!["short", "long"]);
    }

    #[test]
    fn contrasts_are_deterministic() {
        let bundle = build_bundle(
            "T",
            vec![
                trajectory("T", "c1", true, 0, 0),
                trajectory("T", "r1", true, 1, 0),
                trajectory("T", "f1", false, 0, 0),
            ],
        )
        .unwrap();
        assert_eq!(make_contrasts(&bundle, 3).unwrap(), make_contrasts(&bundle, 3).unwrap());
    }

    #[test]
    fn summarize_uses_provider_and_stores_result() {
        let mut bundle = build_bundle("T", vec![trajectory("T", "c1", true, 0, 0)]).unwrap();
        let provider =
            ScriptedChat::new().with_rule(RequestTag::Summarize, None, "turn on wifi and send a message");
        let prompts = PromptSet::builtin();
        let summary = summarize_task(&mut bundle, &provider, &prompts).unwrap();
        assert_eq!(summary, "turn on wifi and send a message");
        assert_eq!(bundle.summary.as_deref(), Some("turn on wifi and send a message"));
        // Deterministic at temperature zero: same provider, same result.
        let again = summarize_task(&mut bundle, &provider, &prompts).unwrap();
        assert_eq!(again, summary);
    }

    #[test]
    fn summarize_without_user_messages_uses_sentinel() {
        let t = Trajectory {
            task_id: "T".into(),
            trial_id: "c1".into(),
            events: vec![Event::assistant_message(0, "standing by")],
            annotation: TerminalAnnotation {
                solved: true,
                milestones_total: 1,
                milestones_missed: 0,
                action_count: 0,
                error_count: 0,
            },
        };
        let mut bundle = build_bundle("T", vec![t]).unwrap();
        let provider = ScriptedChat::new();
        let summary = summarize_task(&mut bundle, &provider, &PromptSet::builtin()).unwrap();
        assert_eq!(summary, EMPTY_SUMMARY_SENTINEL);
    }

    #[test]
    fn rendered_lines_use_role_kind_format() {
        let mut args = Map::new();
        args.insert("k".to_string(), serde_json::json!("v"));
        let t = Trajectory {
            task_id: "T".into(),
            trial_id: "c1".into(),
            events: vec![Event::tool_call(0, "do_thing", args)],
            annotation: TerminalAnnotation {
                solved: true,
                milestones_total: 1,
                milestones_missed: 0,
                action_count: 1,
                error_count: 0,
            },
        };
        let section = render_trajectory_section("ANCHOR", &t);
        assert!(section.contains("[assistant/tool_call] #0 do_thing {\"k\":\"v\"}"));
    }
}
