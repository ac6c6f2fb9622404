//! Multi-channel interaction log model and its on-disk format.
//!
//! A trajectory is an ordered stream of events from three sources: the user,
//! the assistant, and the environment. Assistant tool calls and their
//! environment-side results are linked by event index, so downstream
//! consumers can reconstruct the tool trace from any prefix of the stream.
//!
//! On disk a corpus is line-delimited JSON: one event object per line
//! (`{t, role, kind, body}`) followed by one boundary object per trajectory
//! (`{task_id, trial_id, annotation}`). The boundary carries the terminal
//! annotation emitted by the environment harness; this library never
//! re-judges success.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Maximum payload length kept when rendering a tool result as a prompt line.
pub const MAX_RENDERED_PAYLOAD: usize = 500;

/// Source of an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Environment,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
            Role::Environment => write!(f, "environment"),
        }
    }
}

/// Outcome reported by the environment for a single tool invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
}

/// Status of a call within a trace prefix; the matching result may not have
/// arrived yet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallStatus {
    Ok,
    Error,
    Pending,
}

/// Event content, tagged by kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum EventBody {
    UserMessage {
        text: String,
    },
    AssistantMessage {
        text: String,
    },
    ToolCall {
        name: String,
        args: BTreeMap<String, Value>,
    },
    ToolResult {
        call_index: usize,
        status: ToolStatus,
        payload: String,
    },
    BackendSignal {
        code: String,
        message: String,
    },
}

/// One record in the event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "t")]
    pub index: usize,
    pub role: Role,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn user_message(index: usize, text: impl Into<String>) -> Self {
        Event {
            index,
            role: Role::User,
            body: EventBody::UserMessage { text: text.into() },
        }
    }

    pub fn assistant_message(index: usize, text: impl Into<String>) -> Self {
        Event {
            index,
            role: Role::Assistant,
            body: EventBody::AssistantMessage { text: text.into() },
        }
    }

    pub fn tool_call(index: usize, name: impl Into<String>, args: BTreeMap<String, Value>) -> Self {
        Event {
            index,
            role: Role::Assistant,
            body: EventBody::ToolCall {
                name: name.into(),
                args,
            },
        }
    }

    pub fn tool_result(
        index: usize,
        call_index: usize,
        status: ToolStatus,
        payload: impl Into<String>,
    ) -> Self {
        Event {
            index,
            role: Role::Environment,
            body: EventBody::ToolResult {
                call_index,
                status,
                payload: payload.into(),
            },
        }
    }

    pub fn backend_signal(index: usize, code: impl Into<String>, message: impl Into<String>) -> Self {
        Event {
            index,
            role: Role::Environment,
            body: EventBody::BackendSignal {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    /// Renders the event as a single prompt line: `[role/kind] body`.
    /// Tool-result payloads are truncated to [`MAX_RENDERED_PAYLOAD`] characters.
    pub fn render_line(&self) -> String {
        match &self.body {
            EventBody::UserMessage { text } => format!("[user/user_message] {text}"),
            EventBody::AssistantMessage { text } => {
                format!("[assistant/assistant_message] {text}")
            }
            EventBody::ToolCall { name, args } => {
                let args = serde_json::to_string(args).unwrap_or_else(|_| "{}".to_string());
                format!("[assistant/tool_call] #{} {} {}", self.index, name, args)
            }
            EventBody::ToolResult {
                call_index,
                status,
                payload,
            } => {
                let status = match status {
                    ToolStatus::Ok => "ok",
                    ToolStatus::Error => "error",
                };
                let payload: String = payload.chars().take(MAX_RENDERED_PAYLOAD).collect();
                format!(
                    "[environment/tool_result] call=#{call_index} status={status} {payload}"
                )
            }
            EventBody::BackendSignal { code, message } => {
                format!("[environment/backend_signal] {code} {message}")
            }
        }
    }
}

/// Terminal outcome record attached by the environment harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalAnnotation {
    pub solved: bool,
    pub milestones_total: u32,
    pub milestones_missed: u32,
    pub action_count: u32,
    pub error_count: u32,
}

/// One episode: the ordered event stream plus its terminal annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub trial_id: String,
    pub events: Vec<Event>,
    pub annotation: TerminalAnnotation,
}

/// A tool call paired with the status of its matching result.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub call_index: usize,
    pub name: String,
    pub args: BTreeMap<String, Value>,
    pub status: CallStatus,
}

// ---- Validation ----

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrajectoryViolation {
    /// Event indices must be contiguous from 0.
    NonContiguousIndex { expected: usize, found: usize },
    /// The event kind requires a specific role.
    WrongRole {
        index: usize,
        kind: &'static str,
        expected: Role,
        found: Role,
    },
    /// A tool result must reference an earlier tool call.
    DanglingToolResult { index: usize, call_index: usize },
    MilestonesTotalZero,
    MilestonesMissedExceedsTotal { missed: u32, total: u32 },
    ErrorCountExceedsActionCount { errors: u32, actions: u32 },
}

impl fmt::Display for TrajectoryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectoryViolation::NonContiguousIndex { expected, found } => {
                write!(f, "non-contiguous event index {found} (expected {expected})")
            }
            TrajectoryViolation::WrongRole {
                index,
                kind,
                expected,
                found,
            } => write!(
                f,
                "event {index}: {kind} must have role {expected}, found {found}"
            ),
            TrajectoryViolation::DanglingToolResult { index, call_index } => write!(
                f,
                "event {index}: tool_result references call_index {call_index} with no earlier tool_call"
            ),
            TrajectoryViolation::MilestonesTotalZero => {
                write!(f, "annotation: milestones_total must be positive")
            }
            TrajectoryViolation::MilestonesMissedExceedsTotal { missed, total } => {
                write!(f, "annotation: milestones_missed {missed} exceeds total {total}")
            }
            TrajectoryViolation::ErrorCountExceedsActionCount { errors, actions } => {
                write!(f, "annotation: error_count {errors} exceeds action_count {actions}")
            }
        }
    }
}

/// Report-only validation outcome; empty iff every invariant holds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<TrajectoryViolation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory {trial_id} has no terminal annotation")]
    MissingAnnotation { trial_id: String },
    #[error("{count} event(s) after the last trajectory boundary")]
    UnterminatedEvents { count: usize },
    #[error("duplicate trajectory ({task_id}, {trial_id})")]
    DuplicateTrial { task_id: String, trial_id: String },
    #[error("trajectory {trial_id} failed validation: {report}")]
    InvalidTrajectory {
        trial_id: String,
        report: ValidationReport,
    },
}

// ---- Operations ----

/// Checks every event and annotation invariant, reporting all violations.
pub fn validate(t: &Trajectory) -> ValidationReport {
    let mut violations = Vec::new();
    for (position, event) in t.events.iter().enumerate() {
        if event.index != position {
            violations.push(TrajectoryViolation::NonContiguousIndex {
                expected: position,
                found: event.index,
            });
        }
        match &event.body {
            EventBody::ToolCall { .. } => {
                if event.role != Role::Assistant {
                    violations.push(TrajectoryViolation::WrongRole {
                        index: event.index,
                        kind: "tool_call",
                        expected: Role::Assistant,
                        found: event.role,
                    });
                }
            }
            EventBody::ToolResult { call_index, .. } => {
                if event.role != Role::Environment {
                    violations.push(TrajectoryViolation::WrongRole {
                        index: event.index,
                        kind: "tool_result",
                        expected: Role::Environment,
                        found: event.role,
                    });
                }
                let resolved = t.events[..position]
                    .iter()
                    .any(|e| e.index == *call_index && matches!(e.body, EventBody::ToolCall { .. }));
                if !resolved {
                    violations.push(TrajectoryViolation::DanglingToolResult {
                        index: event.index,
                        call_index: *call_index,
                    });
                }
            }
            EventBody::BackendSignal { .. } => {
                if event.role != Role::Environment {
                    violations.push(TrajectoryViolation::WrongRole {
                        index: event.index,
                        kind: "backend_signal",
                        expected: Role::Environment,
                        found: event.role,
                    });
                }
            }
            EventBody::UserMessage { .. } | EventBody::AssistantMessage { .. } => {}
        }
    }
    let ann = &t.annotation;
    if ann.milestones_total == 0 {
        violations.push(TrajectoryViolation::MilestonesTotalZero);
    }
    if ann.milestones_missed > ann.milestones_total {
        violations.push(TrajectoryViolation::MilestonesMissedExceedsTotal {
            missed: ann.milestones_missed,
            total: ann.milestones_total,
        });
    }
    if ann.error_count > ann.action_count {
        violations.push(TrajectoryViolation::ErrorCountExceedsActionCount {
            errors: ann.error_count,
            actions: ann.action_count,
        });
    }
    ValidationReport { violations }
}

/// Pairs every tool call at index < `up_to` with the status of its matching
/// result within the same prefix, or `Pending` when none exists yet.
pub fn tool_trace_in(events: &[Event], up_to: usize) -> Vec<TraceEntry> {
    let mut entries: Vec<TraceEntry> = Vec::new();
    for event in events.iter().filter(|e| e.index < up_to) {
        match &event.body {
            EventBody::ToolCall { name, args } => entries.push(TraceEntry {
                call_index: event.index,
                name: name.clone(),
                args: args.clone(),
                status: CallStatus::Pending,
            }),
            EventBody::ToolResult {
                call_index, status, ..
            } => {
                if let Some(entry) = entries.iter_mut().rev().find(|c| c.call_index == *call_index)
                {
                    entry.status = match status {
                        ToolStatus::Ok => CallStatus::Ok,
                        ToolStatus::Error => CallStatus::Error,
                    };
                }
            }
            _ => {}
        }
    }
    entries
}

/// The most recent tool call whose result status is ok, if any.
pub fn last_successful_call_in(events: &[Event], up_to: usize) -> Option<TraceEntry> {
    tool_trace_in(events, up_to)
        .into_iter()
        .rev()
        .find(|e| e.status == CallStatus::Ok)
}

/// Names of every tool with at least one ok result in the history.
pub fn succeeded_tools(events: &[Event]) -> BTreeSet<String> {
    tool_trace_in(events, events.len())
        .into_iter()
        .filter(|e| e.status == CallStatus::Ok)
        .map(|e| e.name)
        .collect()
}

impl Trajectory {
    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn tool_trace(&self, up_to: usize) -> Vec<TraceEntry> {
        tool_trace_in(&self.events, up_to)
    }

    pub fn last_successful_call(&self, up_to: usize) -> Option<TraceEntry> {
        last_successful_call_in(&self.events, up_to)
    }

    /// Copy with all environment-role events removed and indices recompacted.
    /// The annotation is preserved. Supports dialogue-only ablations.
    pub fn strip_environment_events(&self) -> Trajectory {
        let events = self
            .events
            .iter()
            .filter(|e| e.role != Role::Environment)
            .enumerate()
            .map(|(i, e)| Event {
                index: i,
                role: e.role,
                body: e.body.clone(),
            })
            .collect();
        Trajectory {
            task_id: self.task_id.clone(),
            trial_id: self.trial_id.clone(),
            events,
            annotation: self.annotation,
        }
    }

    /// User-role message texts, in stream order.
    pub fn user_messages(&self) -> Vec<String> {
        user_messages_in(&self.events)
    }
}

pub fn user_messages_in(events: &[Event]) -> Vec<String> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::UserMessage { text } => Some(text.clone()),
            _ => None,
        })
        .collect()
}

// ---- Corpus file IO ----

#[derive(Serialize, Deserialize)]
struct BoundaryLine {
    task_id: String,
    trial_id: String,
    #[serde(default)]
    annotation: Option<TerminalAnnotation>,
}

/// Loads a line-delimited corpus. Every returned trajectory passes
/// [`validate`]; (task_id, trial_id) pairs are unique.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Trajectory>, EventLogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EventLogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_corpus_from(BufReader::new(file))
}

pub fn load_corpus_from(reader: impl BufRead) -> Result<Vec<Trajectory>, EventLogError> {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut pending: Vec<Event> = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| EventLogError::Io {
            path: "<stream>".to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| EventLogError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let is_boundary = value.get("task_id").is_some();
        if is_boundary {
            let boundary: BoundaryLine =
                serde_json::from_value(value).map_err(|e| EventLogError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let annotation = boundary.annotation.ok_or(EventLogError::MissingAnnotation {
                trial_id: boundary.trial_id.clone(),
            })?;
            let trajectory = Trajectory {
                task_id: boundary.task_id,
                trial_id: boundary.trial_id,
                events: std::mem::take(&mut pending),
                annotation,
            };
            if !seen.insert((trajectory.task_id.clone(), trajectory.trial_id.clone())) {
                return Err(EventLogError::DuplicateTrial {
                    task_id: trajectory.task_id,
                    trial_id: trajectory.trial_id,
                });
            }
            let report = trajectory.validate();
            if !report.is_empty() {
                return Err(EventLogError::InvalidTrajectory {
                    trial_id: trajectory.trial_id,
                    report,
                });
            }
            trajectories.push(trajectory);
        } else {
            let event: Event =
                serde_json::from_value(value).map_err(|e| EventLogError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            pending.push(event);
        }
    }
    if !pending.is_empty() {
        return Err(EventLogError::UnterminatedEvents {
            count: pending.len(),
        });
    }
    Ok(trajectories)
}

pub fn save_corpus(
    path: impl AsRef<Path>,
    trajectories: &[Trajectory],
) -> Result<(), EventLogError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| EventLogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    write_corpus(&mut writer, trajectories).map_err(|source| EventLogError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_corpus(
    writer: &mut impl Write,
    trajectories: &[Trajectory],
) -> Result<(), std::io::Error> {
    for t in trajectories {
        for event in &t.events {
            serde_json::to_writer(&mut *writer, event)?;
            writeln!(writer)?;
        }
        let boundary = BoundaryLine {
            task_id: t.task_id.clone(),
            trial_id: t.trial_id.clone(),
            annotation: Some(t.annotation),
        };
        serde_json::to_writer(&mut *writer, &boundary)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Loads the event prefix of an in-progress episode. Boundary records, if
/// present, are ignored; only events are returned.
pub fn load_history(path: impl AsRef<Path>) -> Result<Vec<Event>, EventLogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EventLogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut events = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| EventLogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| EventLogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if value.get("task_id").is_some() {
            continue;
        }
        let event: Event = serde_json::from_value(value).map_err(|e| EventLogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotation(solved: bool, errors: u32, actions: u32) -> TerminalAnnotation {
        TerminalAnnotation {
            solved,
            milestones_total: 2,
            milestones_missed: if solved { 0 } else { 1 },
            action_count: actions,
            error_count: errors,
        }
    }

    fn sample_trajectory() -> Trajectory {
        Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::user_message(0, "turn on wifi and text John"),
                Event::tool_call(1, "enable_wifi", BTreeMap::new()),
                Event::tool_result(2, 1, ToolStatus::Ok, "wifi=true"),
                Event::tool_call(3, "send_message", BTreeMap::new()),
                Event::tool_result(4, 3, ToolStatus::Error, "ERR_NO_CONTACT: unknown contact"),
                Event::assistant_message(5, "I could not find that contact."),
            ],
            annotation: annotation(false, 1, 2),
        }
    }

    #[test]
    fn round_trip_single_trajectory() {
        let t = sample_trajectory();
        let mut buf = Vec::new();
        write_corpus(&mut buf, std::slice::from_ref(&t)).unwrap();
        let loaded = load_corpus_from(buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0], t);
        assert_eq!(loaded[0].events.len(), 6);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let loaded = load_corpus_from(&b""[..]).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn unknown_role_reports_line_number() {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &[sample_trajectory()]).unwrap();
        let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(String::from).collect();
        lines[2] = lines[2].replace("\"environment\"", "\"env\"");
        let text = lines.join("\n");
        match load_corpus_from(text.as_bytes()) {
            Err(EventLogError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("env"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_annotation_names_trial() {
        let text = "{\"task_id\":\"S1\",\"trial_id\":\"t9\"}\n";
        match load_corpus_from(text.as_bytes()) {
            Err(EventLogError::MissingAnnotation { trial_id }) => assert_eq!(trial_id, "t9"),
            other => panic!("expected missing annotation, got {other:?}"),
        }
    }

    #[test]
    fn trailing_events_are_rejected() {
        let event = Event::user_message(0, "hello");
        let text = format!("{}\n", serde_json::to_string(&event).unwrap());
        match load_corpus_from(text.as_bytes()) {
            Err(EventLogError::UnterminatedEvents { count }) => assert_eq!(count, 1),
            other => panic!("expected unterminated events, got {other:?}"),
        }
    }

    #[test]
    fn validate_flags_dangling_tool_result() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![Event::tool_result(0, 5, ToolStatus::Ok, "x")],
            annotation: annotation(true, 0, 0),
        };
        let report = t.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            TrajectoryViolation::DanglingToolResult { call_index: 5, .. }
        ));
    }

    #[test]
    fn validate_accepts_well_formed_trajectory() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::user_message(0, "hi"),
                Event::tool_call(1, "a", BTreeMap::new()),
                Event::tool_result(2, 1, ToolStatus::Ok, "done"),
                Event::assistant_message(3, "done"),
            ],
            annotation: annotation(true, 0, 1),
        };
        assert!(t.validate().is_empty());
    }

    #[test]
    fn validate_names_non_contiguous_index() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::user_message(0, "a"),
                Event::user_message(1, "b"),
                Event::user_message(3, "c"),
            ],
            annotation: annotation(true, 0, 0),
        };
        let report = t.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, TrajectoryViolation::NonContiguousIndex { found: 3, .. })));
    }

    #[test]
    fn tool_trace_pairs_calls_with_statuses() {
        let t = sample_trajectory();
        let trace = t.tool_trace(t.events.len());
        let got: Vec<(&str, CallStatus)> =
            trace.iter().map(|e| (e.name.as_str(), e.status)).collect();
        assert_eq!(
            got,
            vec![("enable_wifi", CallStatus::Ok), ("send_message", CallStatus::Error)]
        );
    }

    #[test]
    fn tool_trace_empty_prefix() {
        assert!(sample_trajectory().tool_trace(0).is_empty());
    }

    #[test]
    fn tool_trace_pending_without_result() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![Event::tool_call(0, "a", BTreeMap::new())],
            annotation: annotation(false, 0, 1),
        };
        let trace = t.tool_trace(1);
        assert_eq!(trace[0].status, CallStatus::Pending);
    }

    #[test]
    fn last_successful_call_picks_latest_ok() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::tool_call(0, "a", BTreeMap::new()),
                Event::tool_result(1, 0, ToolStatus::Ok, ""),
                Event::tool_call(2, "c", BTreeMap::new()),
                Event::tool_result(3, 2, ToolStatus::Ok, ""),
            ],
            annotation: annotation(true, 0, 2),
        };
        assert_eq!(t.last_successful_call(4).unwrap().name, "c");
    }

    #[test]
    fn last_successful_call_skips_errors() {
        let t = sample_trajectory();
        assert_eq!(t.last_successful_call(6).unwrap().name, "enable_wifi");
    }

    #[test]
    fn no_successes_yields_none() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::tool_call(0, "a", BTreeMap::new()),
                Event::tool_result(1, 0, ToolStatus::Error, "ERR_X: boom"),
            ],
            annotation: annotation(false, 1, 1),
        };
        assert!(t.last_successful_call(2).is_none());
    }

    #[test]
    fn strip_removes_environment_events_and_revalidates() {
        let t = sample_trajectory();
        let stripped = t.strip_environment_events();
        assert_eq!(stripped.events.len(), 4);
        assert!(stripped.validate().is_empty());
        assert_eq!(stripped.annotation, t.annotation);
    }

    #[test]
    fn strip_is_identity_without_environment_events() {
        let t = Trajectory {
            task_id: "S1".into(),
            trial_id: "t1".into(),
            events: vec![
                Event::user_message(0, "hi"),
                Event::assistant_message(1, "hello"),
            ],
            annotation: annotation(true, 0, 0),
        };
        assert_eq!(t.strip_environment_events().events, t.events);
    }

    #[test]
    fn duplicate_trial_is_rejected() {
        let t = sample_trajectory();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &[t.clone(), t]).unwrap();
        assert!(matches!(
            load_corpus_from(buf.as_slice()),
            Err(EventLogError::DuplicateTrial { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random well-formed trajectory: calls interleaved with results,
        /// messages sprinkled in between.
        pub(crate) fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
            proptest::collection::vec(0u8..5, 1..20).prop_map(|ops| {
                let mut events: Vec<Event> = Vec::new();
                let mut open_calls: Vec<usize> = Vec::new();
                let mut errors = 0u32;
                let mut actions = 0u32;
                for op in ops {
                    let index = events.len();
                    match op {
                        0 => events.push(Event::user_message(index, "u")),
                        1 => events.push(Event::assistant_message(index, "a")),
                        2 => {
                            let name = format!("tool_{}", index % 3);
                            events.push(Event::tool_call(index, name, BTreeMap::new()));
                            open_calls.push(index);
                            actions += 1;
                        }
                        3 => {
                            if let Some(call) = open_calls.pop() {
                                events.push(Event::tool_result(index, call, ToolStatus::Ok, "ok"));
                            } else {
                                events.push(Event::user_message(index, "u"));
                            }
                        }
                        _ => {
                            if let Some(call) = open_calls.pop() {
                                events.push(Event::tool_result(
                                    index,
                                    call,
                                    ToolStatus::Error,
                                    "ERR_X: failed",
                                ));
                                errors += 1;
                            } else {
                                events.push(Event::backend_signal(index, "SIG", "note"));
                            }
                        }
                    }
                }
                Trajectory {
                    task_id: "T".into(),
                    trial_id: "p".into(),
                    events,
                    annotation: TerminalAnnotation {
                        solved: errors == 0,
                        milestones_total: 1,
                        milestones_missed: 0,
                        action_count: actions,
                        error_count: errors,
                    },
                }
            })
        }

        proptest! {
            #[test]
            fn generated_trajectories_validate(t in arb_trajectory()) {
                prop_assert!(t.validate().is_empty());
            }

            #[test]
            fn corpus_round_trips(t in arb_trajectory()) {
                let mut buf = Vec::new();
                write_corpus(&mut buf, std::slice::from_ref(&t)).unwrap();
                let loaded = load_corpus_from(buf.as_slice()).unwrap();
                prop_assert_eq!(loaded, vec![t]);
            }

            #[test]
            fn trace_length_counts_calls(t in arb_trajectory(), up_to in 0usize..24) {
                let up_to = up_to.min(t.events.len());
                let calls = t.events.iter()
                    .filter(|e| e.index < up_to && matches!(e.body, EventBody::ToolCall { .. }))
                    .count();
                prop_assert_eq!(t.tool_trace(up_to).len(), calls);
            }

            #[test]
            fn last_success_agrees_with_trace(t in arb_trajectory(), up_to in 0usize..24) {
                let up_to = up_to.min(t.events.len());
                let expected = t.tool_trace(up_to).into_iter().rev()
                    .find(|e| e.status == CallStatus::Ok);
                prop_assert_eq!(t.last_successful_call(up_to), expected);
            }

            #[test]
            fn strip_is_idempotent(t in arb_trajectory()) {
                let once = t.strip_environment_events();
                let twice = once.strip_environment_events();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
