//! Online workflow-guided control: task-query summarization, progress
//! alignment against retrieved workflows, prerequisite-aware action
//! validation, and guidance-block construction.
//!
//! Guidance is advisory. Unknown prerequisite verdicts are surfaced rather
//! than treated as unmet, and the agent consuming a guidance block remains
//! free to deviate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::event_log::{
    last_successful_call_in, succeeded_tools, user_messages_in, Event, EventBody, ToolStatus,
};
use crate::llm_adapter::{ChatProvider, ChatRequest, Embedder, RequestTag, TEST_TEMPERATURE};
use crate::prompts::{PromptKind, PromptSet};
use crate::retrieval::{ExperienceIndex, QueryFilter, RetrievalMode};
use crate::triage::EMPTY_SUMMARY_SENTINEL;
use crate::workflow_model::{ActionBlock, Predicate, Prerequisite, Workflow, WorkflowLibrary};

/// Minimum step-similarity for a match; below this the alignment reports
/// not-started rather than guessing a stage.
pub const MATCH_THRESHOLD: f64 = 0.6;
/// Degraded-summary fallback keeps at most this many characters.
pub const FALLBACK_QUERY_LIMIT: usize = 1_000;
/// Rendered guidance blocks are capped at this many characters.
pub const GUIDANCE_CHAR_BUDGET: usize = 4_000;
/// Per-workflow summary length inside a rendered guidance block.
const SUMMARY_SNIPPET_LIMIT: usize = 600;

/// Task-level query distilled from the interaction history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskQuery {
    pub text: String,
    /// Event-index range the summary was derived from.
    pub derived_from: (usize, usize),
    /// Set when the provider failed and the query fell back to concatenated
    /// user messages.
    pub degraded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    NotStarted,
    InProgress,
    AtEnd,
}

/// Where the history sits within one workflow's planned steps, plus the
/// next-step candidates that follow from there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub workflow_id: String,
    pub matched_step: Option<String>,
    pub match_score: f64,
    pub candidates: Vec<String>,
    pub status: AlignmentStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Met,
    Unmet,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrereqCheck {
    pub prerequisite: Prerequisite,
    pub verdict: Verdict,
    /// Indices of the events that justify the verdict.
    pub evidence: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrereqStatus {
    pub action: String,
    pub items: Vec<PrereqCheck>,
}

impl PrereqStatus {
    pub fn all_met(&self) -> bool {
        self.items.iter().all(|i| i.verdict == Verdict::Met)
    }

    pub fn first_unmet_structured(&self) -> Option<&Predicate> {
        self.items.iter().find_map(|i| match (&i.prerequisite, i.verdict) {
            (Prerequisite::Structured { predicate }, Verdict::Unmet) => Some(predicate),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceFlag {
    EmptyIndex,
    EmptyRetrieval,
    DegradedQuery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedWorkflow {
    pub workflow_id: String,
    pub score: f64,
    pub summary: String,
    pub alignment: AlignmentResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub action: String,
    pub workflow_id: String,
    pub score: f64,
    pub prereqs: PrereqStatus,
}

impl Suggestion {
    pub fn all_met(&self) -> bool {
        self.prereqs.all_met()
    }
}

/// Compact structured context block handed to the agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceBlock {
    pub query: TaskQuery,
    pub retrieved: Vec<RetrievedWorkflow>,
    pub suggestions: Vec<Suggestion>,
    pub flags: Vec<GuidanceFlag>,
    pub rendered: String,
}

// ---- Query summarization ----

/// Summarizes the user's request from the history's user messages. Provider
/// failure degrades to truncated concatenation; zero user messages yield the
/// sentinel query.
pub fn summarize_query(
    history: &[Event],
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
) -> TaskQuery {
    let range = (0, history.len());
    let messages = user_messages_in(history);
    if messages.is_empty() {
        return TaskQuery {
            text: EMPTY_SUMMARY_SENTINEL.to_string(),
            derived_from: range,
            degraded: false,
        };
    }
    let prompt = prompts.render(
        PromptKind::TaskSummarize,
        &[("user_messages", &messages.join("\n"))],
    );
    let request = ChatRequest::user_prompt(RequestTag::Summarize, prompt, TEST_TEMPERATURE);
    match provider.chat(&request) {
        Ok(text) => TaskQuery {
            text: text.trim().to_string(),
            derived_from: range,
            degraded: false,
        },
        Err(_) => {
            let mut text = messages.join(" ");
            text.truncate(
                text.char_indices()
                    .nth(FALLBACK_QUERY_LIMIT)
                    .map_or(text.len(), |(i, _)| i),
            );
            TaskQuery {
                text,
                derived_from: range,
                degraded: true,
            }
        }
    }
}

// ---- Progress alignment ----

/// Normalized longest-common-subsequence similarity between two names.
fn lcs_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let max_len = a.len().max(b.len());
    if max_len == 0 {
        return 1.0;
    }
    let mut previous = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            current[j + 1] = if ca == cb {
                previous[j] + 1
            } else {
                previous[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut previous, &mut current);
        current.fill(0);
    }
    previous[b.len()] as f64 / max_len as f64
}

fn not_started(w: &Workflow, score: f64) -> AlignmentResult {
    AlignmentResult {
        workflow_id: w.workflow_id.clone(),
        matched_step: None,
        match_score: score,
        candidates: w.entry_steps.clone(),
        status: AlignmentStatus::NotStarted,
    }
}

/// Aligns the last successful tool call to the planned-step list and
/// proposes the following step(s).
///
/// Every step is scored against the last successful call: 1.0 on an exact
/// action-name match, otherwise normalized LCS similarity. Among equal
/// scores the winner is the occurrence with the most preceding steps whose
/// actions have already succeeded in the history; remaining ties go to the
/// latest position. A best score under [`MATCH_THRESHOLD`] reports
/// not-started. Candidates are the matched step's successor plus its block's
/// on_success target when that differs.
pub fn align_progress(w: &Workflow, history: &[Event]) -> AlignmentResult {
    let Some(last) = last_successful_call_in(history, history.len()) else {
        return not_started(w, 0.0);
    };
    let executed = succeeded_tools(history);

    let mut best: Option<(usize, f64, usize)> = None; // (position, score, consistency)
    for (position, step) in w.planned_steps.iter().enumerate() {
        let score = lcs_similarity(&step.action, &last.name);
        let consistency = w.planned_steps[..position]
            .iter()
            .filter(|s| executed.contains(&s.action))
            .count();
        let better = match &best {
            None => true,
            Some((best_pos, best_score, best_consistency)) => {
                score > *best_score
                    || (score == *best_score && consistency > *best_consistency)
                    || (score == *best_score && consistency == *best_consistency && position > *best_pos)
            }
        };
        if better {
            best = Some((position, score, consistency));
        }
    }
    let Some((position, score, _)) = best else {
        return not_started(w, 0.0);
    };
    if score < MATCH_THRESHOLD {
        return not_started(w, score);
    }

    let matched = &w.planned_steps[position];
    if position + 1 == w.planned_steps.len() {
        return AlignmentResult {
            workflow_id: w.workflow_id.clone(),
            matched_step: Some(matched.step_id.clone()),
            match_score: score,
            candidates: Vec::new(),
            status: AlignmentStatus::AtEnd,
        };
    }
    let mut candidates = vec![w.planned_steps[position + 1].step_id.clone()];
    if let Some(target) = w.block_for_step(&matched.step_id).and_then(|b| b.on_success_target()) {
        if target != candidates[0] && target != matched.step_id {
            candidates.push(target.to_string());
        }
    }
    AlignmentResult {
        workflow_id: w.workflow_id.clone(),
        matched_step: Some(matched.step_id.clone()),
        match_score: score,
        candidates,
        status: AlignmentStatus::InProgress,
    }
}

// ---- Prerequisite checking ----

/// The `key=value` effect pairs a successful tool result announces.
fn payload_assignments(payload: &str) -> impl Iterator<Item = (&str, &str)> {
    payload
        .split(';')
        .map(str::trim)
        .filter_map(|part| part.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
}

fn check_predicate(predicate: &Predicate, history: &[Event]) -> (Verdict, Vec<usize>) {
    match predicate {
        Predicate::ToolSucceeded { tool } => {
            let mut last_error: Option<usize> = None;
            for event in history {
                if let EventBody::ToolResult {
                    call_index, status, ..
                } = &event.body
                {
                    let call_name = history.iter().find_map(|e| match &e.body {
                        EventBody::ToolCall { name, .. } if e.index == *call_index => {
                            Some(name.as_str())
                        }
                        _ => None,
                    });
                    if call_name == Some(tool.as_str()) {
                        match status {
                            ToolStatus::Ok => return (Verdict::Met, vec![event.index]),
                            ToolStatus::Error => last_error = Some(event.index),
                        }
                    }
                }
            }
            (Verdict::Unmet, last_error.into_iter().collect())
        }
        Predicate::ToolCalled { tool } => {
            for event in history {
                if let EventBody::ToolCall { name, .. } = &event.body {
                    if name == tool {
                        return (Verdict::Met, vec![event.index]);
                    }
                }
            }
            (Verdict::Unmet, Vec::new())
        }
        Predicate::ArgPresent { tool, arg } => {
            for event in history {
                if let EventBody::ToolCall { name, args } = &event.body {
                    if name == tool && args.contains_key(arg) {
                        return (Verdict::Met, vec![event.index]);
                    }
                }
            }
            (Verdict::Unmet, Vec::new())
        }
        Predicate::FlagTrue { key } => {
            // Successful results announce their effects as `key=value`
            // pairs; the latest assignment wins.
            let mut latest: Option<(usize, bool)> = None;
            for event in history {
                if let EventBody::ToolResult {
                    status: ToolStatus::Ok,
                    payload,
                    ..
                } = &event.body
                {
                    for (k, v) in payload_assignments(payload) {
                        if k == key {
                            latest = Some((event.index, v == "true"));
                        }
                    }
                }
            }
            match latest {
                Some((index, true)) => (Verdict::Met, vec![index]),
                Some((index, false)) => (Verdict::Unmet, vec![index]),
                None => (Verdict::Unmet, Vec::new()),
            }
        }
    }
}

fn render_history_for_prompt(history: &[Event]) -> String {
    history
        .iter()
        .map(Event::render_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Evaluates every prerequisite of an action block against the history.
/// Structured prerequisites are decided programmatically and never come back
/// unknown; free-text prerequisites go through the prerequisite-check prompt
/// and degrade to unknown on provider failure or an unparsable reply.
pub fn check_prereqs(
    block: &ActionBlock,
    history: &[Event],
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
) -> PrereqStatus {
    let mut items = Vec::new();
    for prerequisite in block.prereqs() {
        let (verdict, evidence) = match prerequisite {
            Prerequisite::Structured { predicate } => check_predicate(predicate, history),
            Prerequisite::FreeText { text } => {
                let prompt = prompts.render(
                    PromptKind::PrereqCheck,
                    &[("prerequisite", text), ("history", &render_history_for_prompt(history))],
                );
                let request =
                    ChatRequest::user_prompt(RequestTag::Precheck, prompt, TEST_TEMPERATURE);
                let verdict = match provider.chat(&request) {
                    Ok(reply) => {
                        let reply = reply.trim().to_ascii_uppercase();
                        if reply.starts_with("UNMET") {
                            Verdict::Unmet
                        } else if reply.starts_with("MET") {
                            Verdict::Met
                        } else {
                            Verdict::Unknown
                        }
                    }
                    Err(_) => Verdict::Unknown,
                };
                (verdict, Vec::new())
            }
        };
        items.push(PrereqCheck {
            prerequisite: prerequisite.clone(),
            verdict,
            evidence,
        });
    }
    PrereqStatus {
        action: block.action.clone(),
        items,
    }
}

// ---- Guidance assembly ----

fn truncate_chars(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((i, _)) => text[..i].to_string(),
        None => text.to_string(),
    }
}

fn render_guidance(
    query: &TaskQuery,
    retrieved: &[RetrievedWorkflow],
    suggestions: &[Suggestion],
    flags: &[GuidanceFlag],
    summaries_truncated: usize,
) -> String {
    let mut out = String::from("=== WORKFLOW GUIDANCE ===\n");
    out.push_str(&format!("task query: {}\n", query.text));
    for flag in flags {
        out.push_str(&format!("note: {}\n", match flag {
            GuidanceFlag::EmptyIndex => "experience index is empty",
            GuidanceFlag::EmptyRetrieval => "retrieval returned nothing",
            GuidanceFlag::DegradedQuery => "query degraded to raw user messages",
        }));
    }
    for (rank, r) in retrieved.iter().enumerate() {
        let status = match r.alignment.status {
            AlignmentStatus::NotStarted => "not_started",
            AlignmentStatus::InProgress => "in_progress",
            AlignmentStatus::AtEnd => "at_end",
        };
        out.push_str(&format!(
            "[{}] workflow {} score {:.4} stage {}{}\n",
            rank + 1,
            r.workflow_id,
            r.score,
            status,
            r.alignment
                .matched_step
                .as_deref()
                .map(|s| format!(" at {s}"))
                .unwrap_or_default(),
        ));
        // Lowest-ranked summaries are dropped first when over budget.
        if rank < retrieved.len() - summaries_truncated {
            let snippet = truncate_chars(&r.summary, SUMMARY_SNIPPET_LIMIT);
            for line in snippet.lines() {
                out.push_str("    ");
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out.push_str("SUGGESTED NEXT ACTIONS:\n");
    if suggestions.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, s) in suggestions.iter().enumerate() {
        let readiness = if s.all_met() { "ready" } else { "has unmet prerequisites" };
        out.push_str(&format!("{}. {} [{}]\n", i + 1, s.action, readiness));
        for item in &s.prereqs.items {
            let verdict = match item.verdict {
                Verdict::Met => "met",
                Verdict::Unmet => "unmet",
                Verdict::Unknown => "unknown",
            };
            let evidence = if item.evidence.is_empty() {
                String::new()
            } else {
                format!(
                    " (evidence: {})",
                    item.evidence
                        .iter()
                        .map(|e| format!("e{e}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            };
            out.push_str(&format!("   - {}: {}{}\n", item.prerequisite, verdict, evidence));
        }
    }
    out
}

/// Full guidance pipeline: summarize the query, retrieve workflows, align
/// progress per workflow, check candidate prerequisites, and render a
/// bounded context block. Suggestions are ordered all-met first, then by
/// retrieval score descending; an action appearing in several workflows is
/// kept once at its best rank.
pub fn build_guidance(
    history: &[Event],
    index: &ExperienceIndex,
    library: &WorkflowLibrary,
    provider: &dyn ChatProvider,
    embedder: &dyn Embedder,
    prompts: &PromptSet,
    k: usize,
    mode: &RetrievalMode,
) -> GuidanceBlock {
    let query = summarize_query(history, provider, prompts);
    let mut flags = Vec::new();
    if query.degraded {
        flags.push(GuidanceFlag::DegradedQuery);
    }

    let workflow_entries = index
        .entries
        .iter()
        .filter(|e| e.kind == crate::retrieval::EntryKind::Workflow)
        .count();
    if workflow_entries == 0 {
        flags.push(GuidanceFlag::EmptyIndex);
        let rendered = render_guidance(&query, &[], &[], &flags, 0);
        return GuidanceBlock {
            query,
            retrieved: Vec::new(),
            suggestions: Vec::new(),
            flags,
            rendered,
        };
    }

    let hits: Vec<(String, f64)> = match mode {
        RetrievalMode::Similarity => index
            .top_k(embedder, &query.text, k, &QueryFilter::workflows())
            .unwrap_or_default(),
        RetrievalMode::Random { seed } => index.random_k(k, *seed, &QueryFilter::workflows()),
        RetrievalMode::LeaveOneTaskOut { exclude_task } => index
            .top_k(
                embedder,
                &query.text,
                k,
                &QueryFilter::workflows_excluding(exclude_task.clone()),
            )
            .unwrap_or_default(),
    };
    if hits.is_empty() {
        flags.push(GuidanceFlag::EmptyRetrieval);
        let rendered = render_guidance(&query, &[], &[], &flags, 0);
        return GuidanceBlock {
            query,
            retrieved: Vec::new(),
            suggestions: Vec::new(),
            flags,
            rendered,
        };
    }

    let mut retrieved = Vec::new();
    let mut suggestions: Vec<Suggestion> = Vec::new();
    let mut seen_actions: BTreeSet<String> = BTreeSet::new();
    for (id, score) in &hits {
        let Some(workflow) = library.get(id) else {
            continue;
        };
        let alignment = align_progress(workflow, history);
        for step_id in &alignment.candidates {
            let Some(block) = workflow.block_for_step(step_id) else {
                continue;
            };
            if !seen_actions.insert(block.action.clone()) {
                continue;
            }
            let prereqs = check_prereqs(block, history, provider, prompts);
            suggestions.push(Suggestion {
                action: block.action.clone(),
                workflow_id: workflow.workflow_id.clone(),
                score: *score,
                prereqs,
            });
        }
        retrieved.push(RetrievedWorkflow {
            workflow_id: workflow.workflow_id.clone(),
            score: *score,
            summary: crate::workflow_model::render_document(workflow),
            alignment,
        });
    }

    // All-met suggestions first, then retrieval score; stable so candidate
    // order within a workflow is preserved.
    suggestions.sort_by(|a, b| {
        b.all_met()
            .cmp(&a.all_met())
            .then(b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal))
    });

    let mut summaries_truncated = 0;
    let mut rendered = render_guidance(&query, &retrieved, &suggestions, &flags, summaries_truncated);
    while rendered.chars().count() > GUIDANCE_CHAR_BUDGET && summaries_truncated < retrieved.len() {
        summaries_truncated += 1;
        rendered = render_guidance(&query, &retrieved, &suggestions, &flags, summaries_truncated);
    }
    if rendered.chars().count() > GUIDANCE_CHAR_BUDGET {
        rendered = truncate_chars(&rendered, GUIDANCE_CHAR_BUDGET);
    }

    GuidanceBlock {
        query,
        retrieved,
        suggestions,
        flags,
        rendered,
    }
}
