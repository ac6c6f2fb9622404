//! Deterministic stand-in for the workflow inducer.
//!
//! [`TemplateInducer`] is a pure function of (tag, prompt text): it parses
//! the rendered trajectory sections embedded in the built-in prompt
//! templates and answers each induction pass mechanically. The analysis
//! pass lists the anchor's successful tool sequence; the draft pass emits a
//! schema-valid workflow whose planned steps are that sequence, with each
//! step's predecessor as a tool_succeeded prerequisite and one on_error
//! transition per observed error code; the revision pass strips any step
//! whose action the anchor never executed successfully. A step can be
//! planted into drafts to exercise the revision and pruning paths.

use std::collections::{BTreeMap, BTreeSet};

use crate::llm_adapter::{ChatProvider, ChatRequest, ProviderError, RequestTag};
use crate::workflow_model::{
    ActionBlock, PlannedStep, Predicate, Prerequisite, Transition, TransitionCondition, Workflow,
    DONE_STEP,
};

#[derive(Clone, Debug, Default)]
pub struct TemplateInducer {
    plant_unsupported: Option<String>,
}

impl TemplateInducer {
    pub fn new() -> Self {
        TemplateInducer::default()
    }

    /// Injects an extra step with the given action into every draft, so the
    /// revision/pruning paths have something to remove.
    pub fn with_planted_step(mut self, action: impl Into<String>) -> Self {
        self.plant_unsupported = Some(action.into());
        self
    }
}

// ---- Prompt parsing ----

#[derive(Debug)]
enum TraceLine {
    Call { index: usize, name: String },
    Result { call_index: usize, ok: bool, payload: String },
    Signal { code: String },
}

#[derive(Debug)]
struct TraceSection {
    is_anchor: bool,
    lines: Vec<TraceLine>,
}

fn parse_sections(prompt: &str) -> Vec<TraceSection> {
    let mut sections: Vec<TraceSection> = Vec::new();
    let mut current: Option<TraceSection> = None;
    for line in prompt.lines() {
        let line = line.trim_end();
        if let Some(header) = line.strip_prefix("=== ") {
            if let Some(section) = current.take() {
                sections.push(section);
            }
            current = Some(TraceSection {
                is_anchor: header.starts_with("ANCHOR"),
                lines: Vec::new(),
            });
            continue;
        }
        let Some(section) = current.as_mut() else {
            continue;
        };
        if let Some(rest) = line.strip_prefix("[assistant/tool_call] #") {
            if let Some((index, rest)) = rest.split_once(' ') {
                if let Ok(index) = index.parse() {
                    let name = rest.split_whitespace().next().unwrap_or("").to_string();
                    section.lines.push(TraceLine::Call { index, name });
                }
            }
        } else if let Some(rest) = line.strip_prefix("[environment/tool_result] call=#") {
            if let Some((call_index, rest)) = rest.split_once(' ') {
                if let Ok(call_index) = call_index.parse() {
                    let (status, payload) = rest
                        .strip_prefix("status=")
                        .and_then(|r| {
                            r.split_once(' ')
                                .or(Some((r, "")))
                        })
                        .unwrap_or(("", ""));
                    section.lines.push(TraceLine::Result {
                        call_index,
                        ok: status == "ok",
                        payload: payload.to_string(),
                    });
                }
            }
        } else if let Some(rest) = line.strip_prefix("[environment/backend_signal] ") {
            let code = rest.split_whitespace().next().unwrap_or("").to_string();
            section.lines.push(TraceLine::Signal { code });
        } else if !line.starts_with('[') && !line.is_empty() {
            // Prose after the trajectory block ends the section.
            if let Some(section) = current.take() {
                sections.push(section);
            }
        }
    }
    if let Some(section) = current.take() {
        sections.push(section);
    }
    sections
}

/// Tool sequence of the first anchor section: calls with an ok result, or
/// every call when the trace carries no results (dialogue-only evidence; an
/// anchor is a success, so its calls all went through).
fn anchor_sequence(sections: &[TraceSection]) -> Vec<String> {
    let Some(anchor) = sections.iter().find(|s| s.is_anchor) else {
        return Vec::new();
    };
    let mut calls: Vec<(usize, String)> = Vec::new();
    let mut ok_calls: BTreeSet<usize> = BTreeSet::new();
    let mut any_result = false;
    for line in &anchor.lines {
        match line {
            TraceLine::Call { index, name } => calls.push((*index, name.clone())),
            TraceLine::Result { call_index, ok, .. } => {
                any_result = true;
                if *ok {
                    ok_calls.insert(*call_index);
                }
            }
            TraceLine::Signal { .. } => {}
        }
    }
    calls
        .into_iter()
        .filter(|(index, _)| !any_result || ok_calls.contains(index))
        .map(|(_, name)| name)
        .collect()
}

fn payload_code(payload: &str) -> Option<String> {
    let prefix = payload.split_once(':')?.0.trim();
    let code_like = prefix.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && prefix
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
    code_like.then(|| prefix.to_string())
}

/// (failing tool, error code, tool that succeeded next) triples across all
/// sections, first occurrence per (tool, code) pair.
fn error_observations(sections: &[TraceSection]) -> Vec<(String, String, String)> {
    let mut observations = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for section in sections {
        let names: BTreeMap<usize, &str> = section
            .lines
            .iter()
            .filter_map(|l| match l {
                TraceLine::Call { index, name } => Some((*index, name.as_str())),
                _ => None,
            })
            .collect();
        for (position, line) in section.lines.iter().enumerate() {
            let TraceLine::Result {
                call_index,
                ok: false,
                payload,
            } = line
            else {
                continue;
            };
            let Some(tool) = names.get(call_index) else {
                continue;
            };
            // Code from the payload prefix, else from the following signal.
            let code = payload_code(payload).or_else(|| {
                section.lines[position + 1..].iter().find_map(|l| match l {
                    TraceLine::Signal { code } => Some(code.clone()),
                    _ => None,
                })
            });
            let Some(code) = code else { continue };
            let resolver = section.lines[position + 1..].iter().find_map(|l| match l {
                TraceLine::Result {
                    call_index: resolved,
                    ok: true,
                    ..
                } => names.get(resolved).map(|n| n.to_string()),
                _ => None,
            });
            let Some(resolver) = resolver else { continue };
            if seen.insert((tool.to_string(), code.clone())) {
                observations.push((tool.to_string(), code, resolver));
            }
        }
    }
    observations
}

fn section_lines(prompt: &str, header: &str) -> Option<Vec<String>> {
    let mut collecting = false;
    let mut lines = Vec::new();
    for line in prompt.lines() {
        if collecting {
            if line.trim().is_empty() {
                break;
            }
            lines.push(line.trim().to_string());
        } else if line.trim() == header {
            collecting = true;
        }
    }
    collecting.then_some(lines)
}

fn fenced_json(prompt: &str) -> Option<&str> {
    let start = prompt.find("```json")? + "```json".len();
    let end = prompt[start..].find("```")? + start;
    Some(prompt[start..end].trim())
}

// ---- Draft construction ----

fn build_draft(
    summary: &str,
    sequence: &[String],
    errors: &[(String, String, String)],
    planted: Option<&str>,
) -> Workflow {
    let mut sequence: Vec<String> = sequence.to_vec();
    if let Some(extra) = planted {
        sequence.push(extra.to_string());
    }
    let planned_steps: Vec<PlannedStep> = sequence
        .iter()
        .enumerate()
        .map(|(i, action)| PlannedStep {
            step_id: format!("s{i}"),
            action: action.clone(),
            description: format!("invoke {action}"),
            position: i,
        })
        .collect();

    let mut milestones = Vec::new();
    let mut seen = BTreeSet::new();
    for action in &sequence {
        if seen.insert(action.clone()) {
            milestones.push(format!("complete {action}"));
        }
    }

    let first_occurrence = |action: &str| sequence.iter().position(|a| a == action);
    let mut action_blocks: BTreeMap<String, ActionBlock> = BTreeMap::new();
    for action in &sequence {
        if action_blocks.contains_key(action) {
            continue;
        }
        let position = first_occurrence(action).expect("action in sequence");
        let scenario_prereqs = if position == 0 {
            Vec::new()
        } else {
            vec![Prerequisite::Structured {
                predicate: Predicate::ToolSucceeded {
                    tool: sequence[position - 1].clone(),
                },
            }]
        };
        let mut transitions = vec![Transition {
            condition: TransitionCondition::OnSuccess,
            next_step: if position + 1 < sequence.len() {
                format!("s{}", position + 1)
            } else {
                DONE_STEP.to_string()
            },
        }];
        for (tool, code, resolver) in errors {
            if tool == action {
                if let Some(target) = first_occurrence(resolver) {
                    transitions.push(Transition {
                        condition: TransitionCondition::OnError { pattern: code.clone() },
                        next_step: format!("s{target}"),
                    });
                }
            }
        }
        action_blocks.insert(
            action.clone(),
            ActionBlock {
                action: action.clone(),
                global_prereqs: Vec::new(),
                scenario_prereqs,
                transitions,
            },
        );
    }

    Workflow {
        workflow_id: String::new(),
        task_description: summary.to_string(),
        milestones,
        entry_steps: if planned_steps.is_empty() {
            Vec::new()
        } else {
            vec!["s0".to_string()]
        },
        planned_steps,
        action_blocks,
        provenance: Vec::new(),
    }
}

fn revise_draft(draft: Workflow, supported: &BTreeSet<String>) -> Workflow {
    let mut revised = draft;
    revised
        .planned_steps
        .retain(|s| supported.contains(&s.action));
    for (position, step) in revised.planned_steps.iter_mut().enumerate() {
        step.position = position;
    }
    let surviving_ids: BTreeSet<String> = revised
        .planned_steps
        .iter()
        .map(|s| s.step_id.clone())
        .collect();
    let surviving_actions: BTreeSet<&str> = revised
        .planned_steps
        .iter()
        .map(|s| s.action.as_str())
        .collect();
    revised
        .action_blocks
        .retain(|action, _| surviving_actions.contains(action.as_str()));
    for block in revised.action_blocks.values_mut() {
        block.transitions.retain(|t| {
            t.next_step == DONE_STEP || surviving_ids.contains(&t.next_step)
        });
    }
    revised.entry_steps.retain(|s| surviving_ids.contains(s));
    if revised.entry_steps.is_empty() {
        if let Some(first) = revised.planned_steps.first() {
            revised.entry_steps = vec![first.step_id.clone()];
        }
    }
    revised
}

impl ChatProvider for TemplateInducer {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let prompt = request.prompt_text();
        match request.tag {
            RequestTag::Summarize => {
                let echoed = section_lines(&prompt, "USER MESSAGES:")
                    .unwrap_or_default()
                    .join("; ");
                Ok(if echoed.is_empty() { "no user request observed".into() } else { echoed })
            }
            RequestTag::Precheck => Ok("MET".to_string()),
            RequestTag::InductAnalyze => {
                let sections = parse_sections(&prompt);
                let sequence = anchor_sequence(&sections);
                let errors = error_observations(&sections);
                let mut out = format!("successful sequence: {}", sequence.join(" -> "));
                for (tool, code, resolver) in errors {
                    out.push_str(&format!("\nerror {code} on {tool}, resolved by {resolver}"));
                }
                Ok(out)
            }
            RequestTag::InductDraft => {
                let sections = parse_sections(&prompt);
                let sequence = anchor_sequence(&sections);
                let errors = error_observations(&sections);
                let summary = section_lines(&prompt, "TASK SUMMARY:")
                    .unwrap_or_default()
                    .join(" ");
                let draft = build_draft(
                    &summary,
                    &sequence,
                    &errors,
                    self.plant_unsupported.as_deref(),
                );
                Ok(serde_json::to_string_pretty(&draft).expect("draft serializes"))
            }
            RequestTag::InductRevise => {
                let draft_json = fenced_json(&prompt)
                    .ok_or_else(|| ProviderError::MalformedResponse("no fenced draft".into()))?;
                let draft: Workflow = serde_json::from_str(draft_json)
                    .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
                let sections = parse_sections(&prompt);
                let supported: BTreeSet<String> =
                    anchor_sequence(&sections).into_iter().collect();
                let revised = revise_draft(draft, &supported);
                Ok(serde_json::to_string_pretty(&revised).expect("revision serializes"))
            }
            RequestTag::Other => Ok(prompt),
        }
    }
}
