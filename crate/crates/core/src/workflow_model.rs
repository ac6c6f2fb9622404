//! Induced workflow representation: a task-level backbone (description,
//! milestones, planned steps) coupled with per-action blocks carrying
//! checkable prerequisites and feedback-conditioned transitions.
//!
//! Workflows are immutable values once validated. [`render_document`]
//! produces the deterministic text that gets embedded for retrieval;
//! [`render_action_document`] does the same for a single action block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved terminal step id for transitions.
pub const DONE_STEP: &str = "DONE";

/// Closed predicate DSL checkable against event logs and world state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    ToolSucceeded { tool: String },
    ToolCalled { tool: String },
    ArgPresent { tool: String, arg: String },
    FlagTrue { key: String },
}

impl Predicate {
    /// Tool name the predicate references, if any.
    pub fn tool(&self) -> Option<&str> {
        match self {
            Predicate::ToolSucceeded { tool } | Predicate::ToolCalled { tool } => Some(tool),
            Predicate::ArgPresent { tool, .. } => Some(tool),
            Predicate::FlagTrue { .. } => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::ToolSucceeded { tool } => write!(f, "tool_succeeded({tool})"),
            Predicate::ToolCalled { tool } => write!(f, "tool_called({tool})"),
            Predicate::ArgPresent { tool, arg } => write!(f, "arg_present({tool}, {arg})"),
            Predicate::FlagTrue { key } => write!(f, "flag_true({key})"),
        }
    }
}

/// Condition an action requires before execution: structured (programmatic
/// check) or free text (judged by the prerequisite-check prompt).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prerequisite {
    Structured { predicate: Predicate },
    FreeText { text: String },
}

impl fmt::Display for Prerequisite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prerequisite::Structured { predicate } => write!(f, "{predicate}"),
            Prerequisite::FreeText { text } => write!(f, "{text}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransitionCondition {
    OnSuccess,
    OnError { pattern: String },
    OnUserReply,
}

/// Next-step edge grounded in observed environment feedback. `next_step`
/// names a planned step or the terminal [`DONE_STEP`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub condition: TransitionCondition,
    pub next_step: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionBlock {
    pub action: String,
    #[serde(default)]
    pub global_prereqs: Vec<Prerequisite>,
    #[serde(default)]
    pub scenario_prereqs: Vec<Prerequisite>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

impl ActionBlock {
    pub fn prereqs(&self) -> impl Iterator<Item = &Prerequisite> {
        self.global_prereqs.iter().chain(self.scenario_prereqs.iter())
    }

    pub fn on_success_target(&self) -> Option<&str> {
        self.transitions.iter().find_map(|t| match t.condition {
            TransitionCondition::OnSuccess => Some(t.next_step.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub step_id: String,
    pub action: String,
    pub description: String,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRef {
    pub task_id: String,
    pub trial_id: String,
}

/// One induced procedure. `workflow_id` and `provenance` are assigned by the
/// induction pipeline, so drafts parsed from model output may omit them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    #[serde(default)]
    pub workflow_id: String,
    pub task_description: String,
    pub milestones: Vec<String>,
    #[serde(default)]
    pub entry_steps: Vec<String>,
    pub planned_steps: Vec<PlannedStep>,
    #[serde(default)]
    pub action_blocks: BTreeMap<String, ActionBlock>,
    #[serde(default)]
    pub provenance: Vec<ProvenanceRef>,
}

impl Workflow {
    pub fn step(&self, step_id: &str) -> Option<&PlannedStep> {
        self.planned_steps.iter().find(|s| s.step_id == step_id)
    }

    pub fn block_for_step(&self, step_id: &str) -> Option<&ActionBlock> {
        self.step(step_id).and_then(|s| self.action_blocks.get(&s.action))
    }

    /// Task id this workflow was induced from.
    pub fn task_id(&self) -> Option<&str> {
        self.provenance.first().map(|p| p.task_id.as_str())
    }
}

// ---- Validation ----

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkflowViolation {
    EmptyMilestones,
    EmptyProvenance,
    EmptyPlannedSteps,
    DuplicateStepId { step_id: String },
    NonContiguousPosition { step_id: String, expected: usize, found: usize },
    EntryStepUnknown { step_id: String },
    MissingActionBlock { step_id: String, action: String },
    BlockActionMismatch { key: String, action: String },
    InvalidActionName { action: String },
    TransitionTargetUnknown { action: String, next_step: String },
    MultipleOnSuccess { action: String },
    UngroundedAction { action: String },
    UngroundedPrereqTool { action: String, tool: String },
}

impl fmt::Display for WorkflowViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use WorkflowViolation::*;
        match self {
            EmptyMilestones => write!(f, "milestones must be non-empty"),
            EmptyProvenance => write!(f, "provenance must be non-empty"),
            EmptyPlannedSteps => write!(f, "planned_steps must be non-empty"),
            DuplicateStepId { step_id } => write!(f, "duplicate step id {step_id}"),
            NonContiguousPosition { step_id, expected, found } => {
                write!(f, "step {step_id}: position {found} (expected {expected})")
            }
            EntryStepUnknown { step_id } => write!(f, "entry step {step_id} is not a planned step"),
            MissingActionBlock { step_id, action } => {
                write!(f, "step {step_id}: no action block for {action}")
            }
            BlockActionMismatch { key, action } => {
                write!(f, "action block keyed {key} declares action {action}")
            }
            InvalidActionName { action } => write!(f, "invalid action identifier {action:?}"),
            TransitionTargetUnknown { action, next_step } => {
                write!(f, "block {action}: transition targets unknown step {next_step}")
            }
            MultipleOnSuccess { action } => {
                write!(f, "block {action}: more than one on_success transition")
            }
            UngroundedAction { action } => write!(f, "action {action} is not a known tool"),
            UngroundedPrereqTool { action, tool } => {
                write!(f, "block {action}: prerequisite references unknown tool {tool}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkflowReport {
    pub violations: Vec<WorkflowViolation>,
}

impl WorkflowReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for WorkflowReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Reports every schema violation plus grounding violations against
/// `known_tools`.
pub fn validate_workflow(w: &Workflow, known_tools: &BTreeSet<String>) -> WorkflowReport {
    let mut violations = Vec::new();
    if w.milestones.is_empty() {
        violations.push(WorkflowViolation::EmptyMilestones);
    }
    if w.provenance.is_empty() {
        violations.push(WorkflowViolation::EmptyProvenance);
    }
    if w.planned_steps.is_empty() {
        violations.push(WorkflowViolation::EmptyPlannedSteps);
    }

    let mut step_ids: BTreeSet<&str> = BTreeSet::new();
    for (i, step) in w.planned_steps.iter().enumerate() {
        if !step_ids.insert(&step.step_id) {
            violations.push(WorkflowViolation::DuplicateStepId {
                step_id: step.step_id.clone(),
            });
        }
        if step.position != i {
            violations.push(WorkflowViolation::NonContiguousPosition {
                step_id: step.step_id.clone(),
                expected: i,
                found: step.position,
            });
        }
        if !is_identifier(&step.action) {
            violations.push(WorkflowViolation::InvalidActionName {
                action: step.action.clone(),
            });
        }
        if !w.action_blocks.contains_key(&step.action) {
            violations.push(WorkflowViolation::MissingActionBlock {
                step_id: step.step_id.clone(),
                action: step.action.clone(),
            });
        }
        if !known_tools.contains(&step.action) {
            violations.push(WorkflowViolation::UngroundedAction {
                action: step.action.clone(),
            });
        }
    }

    for entry in &w.entry_steps {
        if !step_ids.contains(entry.as_str()) {
            violations.push(WorkflowViolation::EntryStepUnknown {
                step_id: entry.clone(),
            });
        }
    }

    for (key, block) in &w.action_blocks {
        if key != &block.action {
            violations.push(WorkflowViolation::BlockActionMismatch {
                key: key.clone(),
                action: block.action.clone(),
            });
        }
        if !is_identifier(&block.action) {
            violations.push(WorkflowViolation::InvalidActionName {
                action: block.action.clone(),
            });
        }
        let mut on_success_seen = false;
        for transition in &block.transitions {
            if matches!(transition.condition, TransitionCondition::OnSuccess) {
                if on_success_seen {
                    violations.push(WorkflowViolation::MultipleOnSuccess {
                        action: block.action.clone(),
                    });
                }
                on_success_seen = true;
            }
            if transition.next_step != DONE_STEP && !step_ids.contains(transition.next_step.as_str())
            {
                violations.push(WorkflowViolation::TransitionTargetUnknown {
                    action: block.action.clone(),
                    next_step: transition.next_step.clone(),
                });
            }
        }
        for prereq in block.prereqs() {
            if let Prerequisite::Structured { predicate } = prereq {
                if let Some(tool) = predicate.tool() {
                    if !known_tools.contains(tool) {
                        violations.push(WorkflowViolation::UngroundedPrereqTool {
                            action: block.action.clone(),
                            tool: tool.to_string(),
                        });
                    }
                }
            }
        }
    }

    WorkflowReport { violations }
}

// ---- Rendering ----

/// Deterministic embedding document: description, milestones, planned steps,
/// then every prerequisite grouped by action. The workflow id and provenance
/// are deliberately excluded so semantically identical workflows render
/// identically.
pub fn render_document(w: &Workflow) -> String {
    let mut out = String::new();
    out.push_str("Task: ");
    out.push_str(&w.task_description);
    out.push('\n');
    out.push_str("Milestones:\n");
    for (i, m) in w.milestones.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, m));
    }
    out.push_str("Steps:\n");
    for step in &w.planned_steps {
        out.push_str(&format!("{}. {} - {}\n", step.position + 1, step.action, step.description));
    }
    out.push_str("Prerequisites:\n");
    for (action, block) in &w.action_blocks {
        for prereq in block.prereqs() {
            out.push_str(&format!("- {action} requires: {prereq}\n"));
        }
    }
    out
}

/// Action-level embedding document for one block.
pub fn render_action_document(block: &ActionBlock) -> String {
    let mut out = format!("Action: {}\n", block.action);
    let prereqs: Vec<&Prerequisite> = block.prereqs().collect();
    if prereqs.is_empty() {
        out.push_str("no prerequisites\n");
    } else {
        out.push_str("Prerequisites:\n");
        for prereq in prereqs {
            out.push_str(&format!("- {prereq}\n"));
        }
    }
    out
}

// ---- Glob matching for on_error code patterns ----

/// Matches `*` (any run) and `?` (any single char); everything else literal.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    fn inner(p: &[u8], t: &[u8]) -> bool {
        if p.is_empty() {
            return t.is_empty();
        }
        match p[0] {
            b'*' => inner(&p[1..], t) || (!t.is_empty() && inner(p, &t[1..])),
            b'?' => !t.is_empty() && inner(&p[1..], &t[1..]),
            c => !t.is_empty() && t[0] == c && inner(&p[1..], &t[1..]),
        }
    }
    inner(pattern.as_bytes(), text.as_bytes())
}

// ---- Schema text handed to the inducer ----

/// Compact schema description substituted into induction prompts.
pub fn schema_description() -> &'static str {
    r#"{
  "task_description": "<one sentence>",
  "milestones": ["<ordered subgoal>", ...],
  "entry_steps": ["<step_id of each valid starting step>"],
  "planned_steps": [
    {"step_id": "s0", "action": "<tool name>", "description": "<what the step does>", "position": 0},
    ...
  ],
  "action_blocks": {
    "<tool name>": {
      "action": "<tool name>",
      "global_prereqs": [<prerequisite>, ...],
      "scenario_prereqs": [<prerequisite>, ...],
      "transitions": [{"condition": {"type": "on_success"}, "next_step": "<step_id or DONE>"},
                      {"condition": {"type": "on_error", "pattern": "<error code glob>"}, "next_step": "<step_id>"}]
    }
  }
}
where <prerequisite> is either
  {"kind": "structured", "predicate": {"type": "tool_succeeded", "tool": "<name>"}}
  (predicate types: tool_succeeded, tool_called, arg_present {tool, arg}, flag_true {key})
or
  {"kind": "free_text", "text": "<condition in plain language>"}"#
}

// ---- Serialization and library layout ----

#[derive(Debug, Error)]
pub enum WorkflowIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse workflow {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Loaded workflow collection keyed by workflow id. On disk the layout is
/// `workflows/<task_id>/<workflow_id>.json`.
#[derive(Clone, Debug, Default)]
pub struct WorkflowLibrary {
    workflows: BTreeMap<String, Workflow>,
}

impl WorkflowLibrary {
    pub fn new() -> Self {
        WorkflowLibrary::default()
    }

    pub fn from_workflows(workflows: impl IntoIterator<Item = Workflow>) -> Self {
        let mut library = WorkflowLibrary::new();
        for w in workflows {
            library.insert(w);
        }
        library
    }

    pub fn insert(&mut self, w: Workflow) {
        self.workflows.insert(w.workflow_id.clone(), w);
    }

    pub fn get(&self, workflow_id: &str) -> Option<&Workflow> {
        self.workflows.get(workflow_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Workflow> {
        self.workflows.values()
    }

    pub fn len(&self) -> usize {
        self.workflows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workflows.is_empty()
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, WorkflowIoError> {
        let dir = dir.as_ref();
        let mut library = WorkflowLibrary::new();
        let mut paths = Vec::new();
        collect_json_files(dir, &mut paths)?;
        paths.sort();
        for path in paths {
            if path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".revisions.json"))
            {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| WorkflowIoError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let workflow: Workflow =
                serde_json::from_str(&text).map_err(|source| WorkflowIoError::Parse {
                    path: path.display().to_string(),
                    source,
                })?;
            library.insert(workflow);
        }
        Ok(library)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), WorkflowIoError> {
        let dir = dir.as_ref();
        for w in self.workflows.values() {
            let task_dir = dir.join(w.task_id().unwrap_or("unknown"));
            fs::create_dir_all(&task_dir).map_err(|source| WorkflowIoError::Io {
                path: task_dir.display().to_string(),
                source,
            })?;
            let path = task_dir.join(format!("{}.json", w.workflow_id));
            let text = serde_json::to_string_pretty(w).expect("workflow serializes");
            fs::write(&path, text).map_err(|source| WorkflowIoError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn collect_json_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<(), WorkflowIoError> {
    if !dir.exists() {
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(|source| WorkflowIoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| WorkflowIoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        if path.is_dir() {
            collect_json_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;

    /// Linear workflow over the given action names, with tool_succeeded
    /// prerequisites chaining each step to its predecessor.
    pub fn linear_workflow(id: &str, task: &str, actions: &[&str]) -> Workflow {
        let planned_steps: Vec<PlannedStep> = actions
            .iter()
            .enumerate()
            .map(|(i, action)| PlannedStep {
                step_id: format!("s{i}"),
                action: action.to_string(),
                description: format!("invoke {action}"),
                position: i,
            })
            .collect();
        let mut action_blocks = BTreeMap::new();
        for (i, action) in actions.iter().enumerate() {
            if action_blocks.contains_key(*action) {
                continue;
            }
            let scenario_prereqs = if i == 0 {
                Vec::new()
            } else {
                vec![Prerequisite::Structured {
                    predicate: Predicate::ToolSucceeded {
                        tool: actions[i - 1].to_string(),
                    },
                }]
            };
            action_blocks.insert(
                action.to_string(),
                ActionBlock {
                    action: action.to_string(),
                    global_prereqs: Vec::new(),
                    scenario_prereqs,
                    transitions: Vec::new(),
                },
            );
        }
        Workflow {
            workflow_id: id.to_string(),
            task_description: format!("complete {task}"),
            milestones: vec![format!("finish {task}")],
            entry_steps: vec!["s0".to_string()],
            planned_steps,
            action_blocks,
            provenance: vec![ProvenanceRef {
                task_id: task.to_string(),
                trial_id: "fixture".to_string(),
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_fixtures::linear_workflow;
    use super::*;

    fn known(tools: &[&str]) -> BTreeSet<String> {
        tools.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn minimal_workflow_validates() {
        let w = linear_workflow("wf", "T", &["ping"]);
        assert!(validate_workflow(&w, &known(&["ping"])).is_empty());
    }

    #[test]
    fn missing_action_block_is_flagged() {
        let mut w = linear_workflow("wf", "T", &["a", "b", "c"]);
        w.action_blocks.remove("c");
        let report = validate_workflow(&w, &known(&["a", "b", "c"]));
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            &report.violations[0],
            WorkflowViolation::MissingActionBlock { step_id, .. } if step_id == "s2"
        ));
    }

    #[test]
    fn unknown_tool_is_a_grounding_violation() {
        let w = linear_workflow("wf", "T", &["telepot"]);
        let report = validate_workflow(&w, &known(&["other_tool"]));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, WorkflowViolation::UngroundedAction { action } if action == "telepot")));
    }

    #[test]
    fn transition_targets_must_exist_or_be_done() {
        let mut w = linear_workflow("wf", "T", &["a"]);
        w.action_blocks.get_mut("a").unwrap().transitions = vec![
            Transition {
                condition: TransitionCondition::OnSuccess,
                next_step: DONE_STEP.to_string(),
            },
            Transition {
                condition: TransitionCondition::OnError { pattern: "ERR_*".into() },
                next_step: "s9".to_string(),
            },
        ];
        let report = validate_workflow(&w, &known(&["a"]));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, WorkflowViolation::TransitionTargetUnknown { next_step, .. } if next_step == "s9")));
    }

    #[test]
    fn at_most_one_on_success_per_block() {
        let mut w = linear_workflow("wf", "T", &["a"]);
        let done = Transition {
            condition: TransitionCondition::OnSuccess,
            next_step: DONE_STEP.to_string(),
        };
        w.action_blocks.get_mut("a").unwrap().transitions = vec![done.clone(), done];
        let report = validate_workflow(&w, &known(&["a"]));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, WorkflowViolation::MultipleOnSuccess { .. })));
    }

    #[test]
    fn render_excludes_workflow_id() {
        let a = linear_workflow("wf-one", "T", &["a", "b"]);
        let mut b = a.clone();
        b.workflow_id = "wf-two".to_string();
        assert_eq!(render_document(&a), render_document(&b));
    }

    #[test]
    fn render_is_deterministic() {
        let w = linear_workflow("wf", "T", &["a", "b"]);
        assert_eq!(render_document(&w), render_document(&w));
    }

    #[test]
    fn render_lists_each_prerequisite_once() {
        let w = linear_workflow("wf", "T", &["alpha", "beta", "gamma"]);
        let doc = render_document(&w);
        for needle in ["tool_succeeded(alpha)", "tool_succeeded(beta)"] {
            assert_eq!(doc.matches(needle).count(), 1, "{needle} in {doc}");
        }
    }

    #[test]
    fn action_document_lists_prereqs_or_marker() {
        let w = linear_workflow("wf", "T", &["a", "b"]);
        let doc_b = render_action_document(&w.action_blocks["b"]);
        assert!(doc_b.contains("tool_succeeded(a)"));
        let doc_a = render_action_document(&w.action_blocks["a"]);
        assert!(doc_a.contains("no prerequisites"));
        assert_eq!(doc_a, render_action_document(&w.action_blocks["a"]));
    }

    #[test]
    fn serialization_round_trips() {
        let mut w = linear_workflow("wf", "T", &["a", "b"]);
        w.action_blocks.get_mut("b").unwrap().transitions = vec![Transition {
            condition: TransitionCondition::OnError { pattern: "ERR_?".into() },
            next_step: "s0".into(),
        }];
        let text = serde_json::to_string(&w).unwrap();
        let parsed: Workflow = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, w);
    }

    #[test]
    fn adding_a_block_does_not_disturb_unrelated_steps() {
        let w = linear_workflow("wf", "T", &["a", "b"]);
        let before = validate_workflow(&w, &known(&["a", "b", "extra"]));
        let mut extended = w.clone();
        extended.action_blocks.insert(
            "extra".into(),
            ActionBlock {
                action: "extra".into(),
                global_prereqs: Vec::new(),
                scenario_prereqs: Vec::new(),
                transitions: Vec::new(),
            },
        );
        let after = validate_workflow(&extended, &known(&["a", "b", "extra"]));
        assert_eq!(before.violations, after.violations);
    }

    #[test]
    fn glob_patterns() {
        assert!(glob_match("ERR_*", "ERR_WIFI_OFF"));
        assert!(glob_match("ERR_WIFI_OFF", "ERR_WIFI_OFF"));
        assert!(glob_match("ERR_?X", "ERR_AX"));
        assert!(!glob_match("ERR_PAYMENT*", "ERR_WIFI_OFF"));
        assert!(!glob_match("", "x"));
        assert!(glob_match("*", ""));
    }

    #[test]
    fn library_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let library = WorkflowLibrary::from_workflows(vec![
            linear_workflow("wf-a", "T1", &["a"]),
            linear_workflow("wf-b", "T2", &["b"]),
        ]);
        library.save_dir(dir.path()).unwrap();
        assert!(dir.path().join("T1").join("wf-a.json").exists());
        let loaded = WorkflowLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("wf-a"), library.get("wf-a"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_actions() -> impl Strategy<Value = Vec<String>> {
            proptest::collection::vec(0usize..6, 1..6)
                .prop_map(|ids| ids.into_iter().map(|i| format!("tool_{i}")).collect())
        }

        proptest! {
            #[test]
            fn documents_distinguish_step_sequences(a in arb_actions(), b in arb_actions()) {
                let wa = linear_workflow("wf", "T", &a.iter().map(String::as_str).collect::<Vec<_>>());
                let wb = linear_workflow("wf", "T", &b.iter().map(String::as_str).collect::<Vec<_>>());
                if a != b {
                    prop_assert_ne!(render_document(&wa), render_document(&wb));
                } else {
                    prop_assert_eq!(render_document(&wa), render_document(&wb));
                }
            }

            #[test]
            fn workflow_json_round_trips(a in arb_actions()) {
                let w = linear_workflow("wf", "T", &a.iter().map(String::as_str).collect::<Vec<_>>());
                let text = serde_json::to_string(&w).unwrap();
                let parsed: Workflow = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(parsed, w);
            }
        }
    }
}
