//! Grounded workflow induction with programmatic post-verification.
//!
//! The three-pass procedure separates evidence extraction from synthesis:
//! an analysis pass over the task summary and contrast blocks, a drafting
//! pass that must emit schema-conforming JSON, and a revision pass that
//! strips unsupported recommendations. Whatever the passes produce is then
//! checked against the source trajectories; anything still unsupported is
//! pruned before the workflow is accepted. A one-pass mode exists for
//! ablation and runs the same grounding check.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::{EventBody, ToolStatus, Trajectory};
use crate::llm_adapter::{ChatProvider, ChatRequest, ProviderError, RequestTag, TEST_TEMPERATURE};
use crate::prompts::{PromptKind, PromptSet};
use crate::triage::{
    make_contrasts, render_trajectory_section, ContrastBlock, TaskBundle, TriageError,
    DEFAULT_MAX_PAIRS,
};
use crate::workflow_model::{
    glob_match, schema_description, validate_workflow, Prerequisite, ProvenanceRef,
    TransitionCondition, Workflow, WorkflowReport,
};

/// How many times a schema-invalid draft is re-prompted with the parse error
/// before induction fails.
pub const DRAFT_RETRIES: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InductionMode {
    ThreePass,
    OnePass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Full,
    DialogueOnly,
}

/// One induction unit: the evidence bundle (environment events already
/// stripped in dialogue-only mode), its contrast blocks, and the modes.
#[derive(Clone, Debug)]
pub struct InductionJob {
    pub workflow_id: String,
    pub bundle: TaskBundle,
    pub contrasts: Vec<ContrastBlock>,
    pub mode: InductionMode,
    pub trace_mode: TraceMode,
}

fn strip_bundle(bundle: &TaskBundle) -> TaskBundle {
    let mut stripped = bundle.clone();
    stripped.trajectories = bundle
        .trajectories
        .iter()
        .map(Trajectory::strip_environment_events)
        .collect();
    stripped
}

impl InductionJob {
    /// Task-wise job over the whole bundle.
    pub fn new(
        bundle: &TaskBundle,
        max_pairs: usize,
        mode: InductionMode,
        trace_mode: TraceMode,
    ) -> Result<Self, TriageError> {
        let workflow_id = format!("wf-{}", bundle.task_id);
        Self::with_id(workflow_id, bundle, max_pairs, mode, trace_mode)
    }

    fn with_id(
        workflow_id: String,
        bundle: &TaskBundle,
        max_pairs: usize,
        mode: InductionMode,
        trace_mode: TraceMode,
    ) -> Result<Self, TriageError> {
        let bundle = match trace_mode {
            TraceMode::Full => bundle.clone(),
            TraceMode::DialogueOnly => strip_bundle(bundle),
        };
        let contrasts = make_contrasts(&bundle, max_pairs)?;
        Ok(InductionJob {
            workflow_id,
            bundle,
            contrasts,
            mode,
            trace_mode,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RevisionAction {
    Kept,
    Removed,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionEntry {
    pub item: String,
    pub action: RevisionAction,
    pub reason: String,
}

/// Intermediate outputs of the passes: analysis text (three-pass only), the
/// pre-revision draft, and the draft-to-revision change log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassArtifacts {
    pub analysis: Option<String>,
    pub draft: Workflow,
    pub revision_log: Vec<RevisionEntry>,
}

#[derive(Debug, Error)]
pub enum InductionError {
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error("draft unparsable after {attempts} attempt(s): {raw}")]
    DraftUnparsable { attempts: u32, raw: String },
    #[error("pruning unsupported content emptied workflow {workflow_id}")]
    EmptyAfterPruning { workflow_id: String },
    #[error("induced workflow failed validation: {report}")]
    ValidationFailed { report: WorkflowReport },
}

// ---- Grounding ----

/// Unsupported content found by checking a workflow against its source
/// trajectories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundReport {
    /// Planned steps whose action never appears as a tool call.
    pub ungrounded_steps: Vec<String>,
    /// (action, pattern) pairs whose on_error pattern matches no observed
    /// error code.
    pub ungrounded_transitions: Vec<(String, String)>,
    /// (action, prerequisite) pairs referencing tools never observed.
    pub ungrounded_prereqs: Vec<(String, Prerequisite)>,
}

impl GroundReport {
    pub fn is_empty(&self) -> bool {
        self.ungrounded_steps.is_empty()
            && self.ungrounded_transitions.is_empty()
            && self.ungrounded_prereqs.is_empty()
    }
}

/// Tool names called anywhere in the bundle.
pub fn observed_tools(bundle: &TaskBundle) -> BTreeSet<String> {
    let mut tools = BTreeSet::new();
    for t in &bundle.trajectories {
        for event in &t.events {
            if let EventBody::ToolCall { name, .. } = &event.body {
                tools.insert(name.clone());
            }
        }
    }
    tools
}

fn looks_like_code(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && token.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Error codes observed in the bundle: backend-signal codes plus the
/// `CODE:` prefix of error tool-result payloads.
pub fn observed_error_codes(bundle: &TaskBundle) -> BTreeSet<String> {
    let mut codes = BTreeSet::new();
    for t in &bundle.trajectories {
        for event in &t.events {
            match &event.body {
                EventBody::BackendSignal { code, .. } => {
                    codes.insert(code.clone());
                }
                EventBody::ToolResult {
                    status: ToolStatus::Error,
                    payload,
                    ..
                } => {
                    if let Some((prefix, _)) = payload.split_once(':') {
                        let prefix = prefix.trim();
                        if looks_like_code(prefix) {
                            codes.insert(prefix.to_string());
                        }
                    }
                }
                _ => {}
            }
        }
    }
    codes
}

/// Flags planned steps never called in the bundle, on_error transitions
/// whose pattern matches no observed error code, and structured
/// prerequisites referencing unobserved tools.
pub fn ground_check(w: &Workflow, bundle: &TaskBundle) -> GroundReport {
    let tools = observed_tools(bundle);
    let codes = observed_error_codes(bundle);
    let mut report = GroundReport::default();
    for step in &w.planned_steps {
        if !tools.contains(&step.action) {
            report.ungrounded_steps.push(step.step_id.clone());
        }
    }
    for block in w.action_blocks.values() {
        for transition in &block.transitions {
            if let TransitionCondition::OnError { pattern } = &transition.condition {
                if !codes.iter().any(|code| glob_match(pattern, code)) {
                    report
                        .ungrounded_transitions
                        .push((block.action.clone(), pattern.clone()));
                }
            }
        }
        for prereq in block.prereqs() {
            if let Prerequisite::Structured { predicate } = prereq {
                if let Some(tool) = predicate.tool() {
                    if !tools.contains(tool) {
                        report
                            .ungrounded_prereqs
                            .push((block.action.clone(), prereq.clone()));
                    }
                }
            }
        }
    }
    report
}

/// Removes everything the report flagged, then restores internal
/// consistency: positions recompact, dangling transition targets drop,
/// entry steps re-anchor, and blocks no step uses any more disappear.
/// An empty report returns the workflow unchanged.
pub fn prune_unsupported(w: &Workflow, report: &GroundReport) -> Result<Workflow, InductionError> {
    if report.is_empty() {
        return Ok(w.clone());
    }
    let removed_steps: BTreeSet<&str> = report.ungrounded_steps.iter().map(String::as_str).collect();
    let mut pruned = w.clone();
    pruned.planned_steps.retain(|s| !removed_steps.contains(s.step_id.as_str()));
    for (position, step) in pruned.planned_steps.iter_mut().enumerate() {
        step.position = position;
    }
    if pruned.planned_steps.is_empty() {
        return Err(InductionError::EmptyAfterPruning {
            workflow_id: w.workflow_id.clone(),
        });
    }
    let surviving_ids: BTreeSet<&str> = pruned
        .planned_steps
        .iter()
        .map(|s| s.step_id.as_str())
        .collect();
    let surviving_actions: BTreeSet<&str> = pruned
        .planned_steps
        .iter()
        .map(|s| s.action.as_str())
        .collect();

    pruned
        .action_blocks
        .retain(|action, _| surviving_actions.contains(action.as_str()));
    for block in pruned.action_blocks.values_mut() {
        block.transitions.retain(|t| {
            let flagged = matches!(&t.condition, TransitionCondition::OnError { pattern }
                if report.ungrounded_transitions.iter().any(|(a, p)| a == &block.action && p == pattern));
            let dangling = t.next_step != crate::workflow_model::DONE_STEP
                && !surviving_ids.contains(t.next_step.as_str());
            !flagged && !dangling
        });
        block.global_prereqs.retain(|p| {
            !report
                .ungrounded_prereqs
                .iter()
                .any(|(a, flagged)| a == &block.action && flagged == p)
        });
        block.scenario_prereqs.retain(|p| {
            !report
                .ungrounded_prereqs
                .iter()
                .any(|(a, flagged)| a == &block.action && flagged == p)
        });
    }

    pruned.entry_steps.retain(|s| surviving_ids.contains(s.as_str()));
    if pruned.entry_steps.is_empty() {
        pruned.entry_steps = vec![pruned.planned_steps[0].step_id.clone()];
    }
    Ok(pruned)
}

// ---- Pass execution ----

/// Pulls the first JSON object out of a model reply, tolerating fences and
/// prose around it.
fn parse_workflow_reply(text: &str) -> Result<Workflow, String> {
    if let Ok(w) = serde_json::from_str::<Workflow>(text) {
        return Ok(w);
    }
    let start = text.find('{').ok_or("no JSON object in reply")?;
    let end = text.rfind('}').ok_or("unterminated JSON object in reply")?;
    if end <= start {
        return Err("unterminated JSON object in reply".to_string());
    }
    serde_json::from_str::<Workflow>(&text[start..=end]).map_err(|e| e.to_string())
}

fn chat_for_workflow(
    provider: &dyn ChatProvider,
    tag: RequestTag,
    prompt: &str,
) -> Result<Workflow, InductionError> {
    let mut prompt = prompt.to_string();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let request = ChatRequest::user_prompt(tag, prompt.clone(), TEST_TEMPERATURE);
        let reply = provider.chat(&request)?;
        match parse_workflow_reply(&reply) {
            Ok(w) => return Ok(w),
            Err(parse_error) if attempts <= DRAFT_RETRIES => {
                prompt.push_str(&format!(
                    "\n\nThe previous reply could not be parsed: {parse_error}\nReply with the corrected JSON object only."
                ));
            }
            Err(_) => {
                return Err(InductionError::DraftUnparsable {
                    attempts,
                    raw: reply,
                })
            }
        }
    }
}

fn contrasts_text(job: &InductionJob) -> String {
    if job.contrasts.is_empty() {
        // Anchor-only path: a single clean success still grounds a workflow.
        let anchor = job.bundle.anchor().expect("job construction requires a success");
        render_trajectory_section("ANCHOR", anchor)
    } else {
        job.contrasts
            .iter()
            .map(|c| c.rendered.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn diff_revision(draft: &Workflow, revised: &Workflow) -> Vec<RevisionEntry> {
    let mut log = Vec::new();
    for step in &draft.planned_steps {
        match revised.planned_steps.iter().find(|s| s.step_id == step.step_id) {
            None => log.push(RevisionEntry {
                item: format!("planned step {} ({})", step.step_id, step.action),
                action: RevisionAction::Removed,
                reason: "not supported by the source trajectories".into(),
            }),
            Some(kept) if kept.action != step.action || kept.description != step.description => {
                log.push(RevisionEntry {
                    item: format!("planned step {}", step.step_id),
                    action: RevisionAction::Fixed,
                    reason: "rewritten during revision".into(),
                });
            }
            Some(_) => {}
        }
    }
    for (action, block) in &draft.action_blocks {
        let revised_block = revised.action_blocks.get(action);
        match revised_block {
            None => log.push(RevisionEntry {
                item: format!("action block {action}"),
                action: RevisionAction::Removed,
                reason: "no surviving step uses the action".into(),
            }),
            Some(r) => {
                for transition in &block.transitions {
                    if !r.transitions.contains(transition) {
                        log.push(RevisionEntry {
                            item: format!("transition on {action}"),
                            action: RevisionAction::Removed,
                            reason: "branch not observed in the trajectories".into(),
                        });
                    }
                }
            }
        }
    }
    log
}

/// Runs the induction passes for one job and grounds the result. The final
/// workflow always validates against the bundle's observed tools and passes
/// a fresh ground check.
pub fn induce(
    job: &InductionJob,
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
) -> Result<(Workflow, PassArtifacts), InductionError> {
    let summary = match &job.bundle.summary {
        Some(s) => s.clone(),
        None => {
            let mut bundle = job.bundle.clone();
            crate::triage::summarize_task(&mut bundle, provider, prompts)?
        }
    };
    let contrasts = contrasts_text(job);
    let schema = schema_description();

    let (mut candidate, artifacts) = match job.mode {
        InductionMode::ThreePass => {
            let analyze_prompt = prompts.render(
                PromptKind::InductAnalyze,
                &[("summary", &summary), ("contrasts", &contrasts)],
            );
            let analysis = provider.chat(&ChatRequest::user_prompt(
                RequestTag::InductAnalyze,
                analyze_prompt,
                TEST_TEMPERATURE,
            ))?;

            let draft_prompt = prompts.render(
                PromptKind::InductDraft,
                &[
                    ("summary", &summary),
                    ("contrasts", &contrasts),
                    ("analysis", &analysis),
                    ("schema", schema),
                ],
            );
            let draft = chat_for_workflow(provider, RequestTag::InductDraft, &draft_prompt)?;

            let draft_json = serde_json::to_string_pretty(&draft).expect("draft serializes");
            let revise_prompt = prompts.render(
                PromptKind::InductRevise,
                &[
                    ("draft", &draft_json),
                    ("contrasts", &contrasts),
                    ("schema", schema),
                ],
            );
            let revised = chat_for_workflow(provider, RequestTag::InductRevise, &revise_prompt)?;
            let revision_log = diff_revision(&draft, &revised);
            (
                revised,
                PassArtifacts {
                    analysis: Some(analysis),
                    draft,
                    revision_log,
                },
            )
        }
        InductionMode::OnePass => {
            let prompt = prompts.render(
                PromptKind::InductOnePass,
                &[
                    ("summary", &summary),
                    ("contrasts", &contrasts),
                    ("schema", schema),
                ],
            );
            let draft = chat_for_workflow(provider, RequestTag::InductDraft, &prompt)?;
            (
                draft.clone(),
                PassArtifacts {
                    analysis: None,
                    draft,
                    revision_log: Vec::new(),
                },
            )
        }
    };

    candidate.workflow_id = job.workflow_id.clone();
    candidate.provenance = job
        .bundle
        .trajectories
        .iter()
        .map(|t| ProvenanceRef {
            task_id: t.task_id.clone(),
            trial_id: t.trial_id.clone(),
        })
        .collect();

    // Grounding runs regardless of mode.
    let report = ground_check(&candidate, &job.bundle);
    let grounded = prune_unsupported(&candidate, &report)?;
    debug_assert!(ground_check(&grounded, &job.bundle).is_empty());

    let validation = validate_workflow(&grounded, &observed_tools(&job.bundle));
    if !validation.is_empty() {
        return Err(InductionError::ValidationFailed { report: validation });
    }
    Ok((grounded, artifacts))
}

/// Outcome of per-trajectory induction: one workflow per inducible
/// trajectory, plus the trial ids that were skipped for lack of a success.
#[derive(Debug, Default)]
pub struct TrajectoryWiseOutcome {
    pub workflows: Vec<(Workflow, PassArtifacts)>,
    pub skipped: Vec<String>,
}

/// Induces one workflow from each individual trajectory of the bundle.
pub fn induce_trajectory_wise(
    bundle: &TaskBundle,
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
    mode: InductionMode,
    trace_mode: TraceMode,
) -> Result<TrajectoryWiseOutcome, InductionError> {
    let mut outcome = TrajectoryWiseOutcome::default();
    for t in &bundle.trajectories {
        let mut sub_bundle =
            crate::triage::build_bundle(bundle.task_id.clone(), vec![t.clone()])
                .expect("single trajectory bundle");
        sub_bundle.summary = bundle.summary.clone();
        let workflow_id = format!("wf-{}-{}", bundle.task_id, t.trial_id);
        match InductionJob::with_id(workflow_id, &sub_bundle, DEFAULT_MAX_PAIRS, mode, trace_mode) {
            Ok(job) => outcome.workflows.push(induce(&job, provider, prompts)?),
            Err(TriageError::InductionSkipped { .. }) => outcome.skipped.push(t.trial_id.clone()),
            Err(other) => return Err(other.into()),
        }
    }
    Ok(outcome)
}
