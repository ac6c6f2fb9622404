//! Desk-scale stateful tool environment for generating corpora and running
//! end-to-end comparisons without a live service.
//!
//! Scenarios declare tools with hidden prerequisites, milestone predicates,
//! and a scripted user. Episodes interleave scripted utterances with policy
//! actions and emit full multi-channel trajectories. Three policies are
//! provided: an oracle that knows each scenario's prerequisite order, a
//! naive agent that works through the declared tool list and retries after
//! errors, and a guided agent driven by workflow guidance.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::{build_guidance, GuidanceFlag};
use crate::event_log::{
    succeeded_tools, tool_trace_in, CallStatus, Event, TerminalAnnotation, ToolStatus, Trajectory,
};
use crate::llm_adapter::{ChatProvider, Embedder, RevealMap};
use crate::prompts::PromptSet;
use crate::retrieval::{ExperienceIndex, RetrievalMode};
use crate::workflow_model::{Predicate, WorkflowLibrary};

pub const DEFAULT_NAIVE_RETRY_BUDGET: u32 = 2;

// ---- Scenario declaration ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StateMutation {
    Set { key: String, value: String },
    Append { key: String, value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub required_args: Vec<String>,
    #[serde(default)]
    pub hidden_prereqs: Vec<Predicate>,
    #[serde(default)]
    pub effects: Vec<StateMutation>,
    /// `CODE: message` emitted when a required arg is missing or a hidden
    /// prerequisite is unmet.
    pub error_template: String,
}

impl ToolSpec {
    pub fn error_code(&self) -> &str {
        self.error_template
            .split_once(':')
            .map_or(self.error_template.as_str(), |(code, _)| code.trim())
    }

    pub fn error_message(&self) -> &str {
        self.error_template
            .split_once(':')
            .map_or("", |(_, message)| message.trim())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MilestonePredicate {
    ToolSucceeded { tool: String },
    StateEquals { key: String, value: String },
}

/// One scripted user turn. `reveals` are the structured argument values the
/// utterance carries, so policies never parse natural language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    #[serde(default)]
    pub reveals: RevealMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleStep {
    Call { tool: String },
    Ask { text: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub tools: Vec<ToolSpec>,
    pub milestones: Vec<MilestonePredicate>,
    pub user_script: Vec<Utterance>,
    pub max_turns: usize,
    #[serde(default)]
    pub initial_state: BTreeMap<String, String>,
    /// The known-good action sequence, consumed by [`OraclePolicy`].
    #[serde(default)]
    pub oracle_script: Vec<OracleStep>,
}

impl ScenarioSpec {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let names: BTreeSet<&str> = self.tools.iter().map(|t| t.name.as_str()).collect();
        if names.len() != self.tools.len() {
            return Err(SandboxError::InvalidScenario {
                scenario_id: self.scenario_id.clone(),
                reason: "duplicate tool names".into(),
            });
        }
        let mut state_keys: BTreeSet<&str> =
            self.initial_state.keys().map(String::as_str).collect();
        for tool in &self.tools {
            for effect in &tool.effects {
                match effect {
                    StateMutation::Set { key, .. } | StateMutation::Append { key, .. } => {
                        state_keys.insert(key);
                    }
                }
            }
        }
        for milestone in &self.milestones {
            let ok = match milestone {
                MilestonePredicate::ToolSucceeded { tool } => names.contains(tool.as_str()),
                MilestonePredicate::StateEquals { key, .. } => state_keys.contains(key.as_str()),
            };
            if !ok {
                return Err(SandboxError::InvalidScenario {
                    scenario_id: self.scenario_id.clone(),
                    reason: format!("milestone references undeclared name: {milestone:?}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("scenario {scenario_id} is invalid: {reason}")]
    InvalidScenario { scenario_id: String, reason: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

// ---- Environment ----

/// Result of one tool invocation against the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub status: ToolStatus,
    pub payload: String,
    /// Error code plus message, also surfaced as a backend signal.
    pub signal: Option<(String, String)>,
}

/// Mutable world for one episode. A failed step never mutates state.
#[derive(Clone, Debug)]
pub struct Environment {
    spec: ScenarioSpec,
    state: BTreeMap<String, String>,
    called: BTreeSet<String>,
    succeeded: BTreeSet<String>,
    args_seen: BTreeMap<String, BTreeSet<String>>,
}

impl Environment {
    pub fn new(spec: &ScenarioSpec) -> Self {
        Environment {
            spec: spec.clone(),
            state: spec.initial_state.clone(),
            called: BTreeSet::new(),
            succeeded: BTreeSet::new(),
            args_seen: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> &BTreeMap<String, String> {
        &self.state
    }

    fn predicate_holds(&self, predicate: &Predicate) -> bool {
        match predicate {
            Predicate::ToolSucceeded { tool } => self.succeeded.contains(tool),
            Predicate::ToolCalled { tool } => self.called.contains(tool),
            Predicate::ArgPresent { tool, arg } => self
                .args_seen
                .get(tool)
                .is_some_and(|args| args.contains(arg)),
            Predicate::FlagTrue { key } => self.state.get(key).map(String::as_str) == Some("true"),
        }
    }

    /// Executes one tool call. Missing required args and unmet hidden
    /// prerequisites produce the tool's error template and leave the state
    /// untouched; success applies the declared effects and reports them in
    /// the payload as `key=value` pairs.
    pub fn step(&mut self, name: &str, args: &BTreeMap<String, Value>) -> StepOutcome {
        let Some(tool) = self.spec.tool(name).cloned() else {
            let message = format!("no tool named {name}");
            return StepOutcome {
                status: ToolStatus::Error,
                payload: format!("ERR_UNKNOWN_TOOL: {message}"),
                signal: Some(("ERR_UNKNOWN_TOOL".into(), message)),
            };
        };
        self.called.insert(tool.name.clone());
        let seen = self.args_seen.entry(tool.name.clone()).or_default();
        for arg in args.keys() {
            seen.insert(arg.clone());
        }

        let missing_arg = tool.required_args.iter().any(|a| !args.contains_key(a));
        let unmet_prereq = tool
            .hidden_prereqs
            .iter()
            .any(|p| !self.predicate_holds(p));
        if missing_arg || unmet_prereq {
            return StepOutcome {
                status: ToolStatus::Error,
                payload: tool.error_template.clone(),
                signal: Some((tool.error_code().to_string(), tool.error_message().to_string())),
            };
        }

        let mut assignments = Vec::new();
        for effect in &tool.effects {
            match effect {
                StateMutation::Set { key, value } => {
                    self.state.insert(key.clone(), value.clone());
                    assignments.push(format!("{key}={value}"));
                }
                StateMutation::Append { key, value } => {
                    let entry = self.state.entry(key.clone()).or_default();
                    if entry.is_empty() {
                        *entry = value.clone();
                    } else {
                        *entry = format!("{entry};{value}");
                    }
                    assignments.push(format!("{key}={entry}", entry = self.state[key]));
                }
            }
        }
        self.succeeded.insert(tool.name.clone());
        let payload = if assignments.is_empty() {
            "ok".to_string()
        } else {
            assignments.join("; ")
        };
        StepOutcome {
            status: ToolStatus::Ok,
            payload,
            signal: None,
        }
    }

    fn milestone_holds(&self, milestone: &MilestonePredicate) -> bool {
        match milestone {
            MilestonePredicate::ToolSucceeded { tool } => self.succeeded.contains(tool),
            MilestonePredicate::StateEquals { key, value } => {
                self.state.get(key) == Some(value)
            }
        }
    }

    pub fn milestones_missed(&self) -> u32 {
        self.spec
            .milestones
            .iter()
            .filter(|m| !self.milestone_holds(m))
            .count() as u32
    }

    pub fn all_milestones_met(&self) -> bool {
        self.milestones_missed() == 0
    }
}

// ---- Policies ----

#[derive(Debug, Error)]
#[error("policy failure: {0}")]
pub struct PolicyError(pub String);

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyAction {
    Call {
        name: String,
        args: BTreeMap<String, Value>,
    },
    Ask {
        text: String,
    },
    Stop {
        text: String,
    },
}

/// What a policy sees at a decision point. Hidden prerequisites are absent
/// by design; only the public tool surface is visible.
pub struct PolicyView<'a> {
    pub events: &'a [Event],
    pub tools: &'a [ToolSpec],
    pub reveals: &'a RevealMap,
    pub script_remaining: bool,
    pub seed: u64,
}

impl PolicyView<'_> {
    pub fn has_tool(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn required_args(&self, name: &str) -> &[String] {
        self.tools
            .iter()
            .find(|t| t.name == name)
            .map_or(&[], |t| t.required_args.as_slice())
    }

    /// Fills a tool's required args from the reveals known so far; returns
    /// the first missing arg name, if any.
    pub fn fill_args(&self, name: &str) -> (BTreeMap<String, Value>, Option<String>) {
        let mut args = BTreeMap::new();
        let mut missing = None;
        for arg in self.required_args(name) {
            match self.reveals.get(arg) {
                Some(value) => {
                    args.insert(arg.clone(), Value::String(value.clone()));
                }
                None if missing.is_none() => missing = Some(arg.clone()),
                None => {}
            }
        }
        (args, missing)
    }
}

pub trait AgentPolicy {
    fn name(&self) -> &str;
    fn reset(&mut self);
    fn decide(&mut self, view: &PolicyView<'_>) -> Result<PolicyAction, PolicyError>;
}

/// Replays the scenario's known-good script.
pub struct OraclePolicy {
    script: Vec<OracleStep>,
    cursor: usize,
}

impl OraclePolicy {
    pub fn for_scenario(spec: &ScenarioSpec) -> Self {
        OraclePolicy {
            script: spec.oracle_script.clone(),
            cursor: 0,
        }
    }
}

impl AgentPolicy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn reset(&mut self) {
        self.cursor = 0;
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> Result<PolicyAction, PolicyError> {
        let Some(step) = self.script.get(self.cursor) else {
            return Ok(PolicyAction::Stop {
                text: "All done.".into(),
            });
        };
        self.cursor += 1;
        match step {
            OracleStep::Call { tool } => {
                let (args, _) = view.fill_args(tool);
                Ok(PolicyAction::Call {
                    name: tool.clone(),
                    args,
                })
            }
            OracleStep::Ask { text } => Ok(PolicyAction::Ask { text: text.clone() }),
        }
    }
}

/// Works through the declared tool list in order, ignoring hidden
/// prerequisites. Tools that errored are retried in later passes, up to
/// `retry_budget` extra attempts each; at the start of each retry pass the
/// agent asks the user for more details if the script has any left.
pub struct NaivePolicy {
    retry_budget: u32,
    started: bool,
    queue: VecDeque<String>,
    ask_pending: bool,
    attempts: BTreeMap<String, u32>,
}

impl NaivePolicy {
    pub fn new(retry_budget: u32) -> Self {
        NaivePolicy {
            retry_budget,
            started: false,
            queue: VecDeque::new(),
            ask_pending: false,
            attempts: BTreeMap::new(),
        }
    }
}

impl Default for NaivePolicy {
    fn default() -> Self {
        NaivePolicy::new(DEFAULT_NAIVE_RETRY_BUDGET)
    }
}

impl AgentPolicy for NaivePolicy {
    fn name(&self) -> &str {
        "naive"
    }

    fn reset(&mut self) {
        self.started = false;
        self.queue.clear();
        self.ask_pending = false;
        self.attempts.clear();
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> Result<PolicyAction, PolicyError> {
        if !self.started {
            self.started = true;
            self.queue = view.tools.iter().map(|t| t.name.clone()).collect();
        }
        if self.queue.is_empty() {
            let succeeded = succeeded_tools(view.events);
            let retryable: VecDeque<String> = view
                .tools
                .iter()
                .map(|t| t.name.clone())
                .filter(|name| {
                    !succeeded.contains(name)
                        && self.attempts.get(name).copied().unwrap_or(0) < 1 + self.retry_budget
                })
                .collect();
            if retryable.is_empty() {
                return Ok(PolicyAction::Stop {
                    text: "That is everything I can do.".into(),
                });
            }
            self.queue = retryable;
            self.ask_pending = view.script_remaining;
        }
        if self.ask_pending {
            self.ask_pending = false;
            return Ok(PolicyAction::Ask {
                text: "Could you share any details I might still need?".into(),
            });
        }
        let tool = self.queue.pop_front().expect("queue refilled above");
        *self.attempts.entry(tool.clone()).or_default() += 1;
        let (args, _) = view.fill_args(&tool);
        Ok(PolicyAction::Call { name: tool, args })
    }
}

/// Executes workflow guidance: the first all-met suggestion whose action the
/// environment exposes, otherwise the tool that resolves the first unmet
/// structured prerequisite, otherwise a naive step over the declared tools.
pub struct GuidedPolicy<'a> {
    index: &'a ExperienceIndex,
    library: &'a WorkflowLibrary,
    provider: &'a dyn ChatProvider,
    embedder: &'a dyn Embedder,
    prompts: &'a PromptSet,
    k: usize,
    mode: RetrievalMode,
    degraded: bool,
}

impl<'a> GuidedPolicy<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        index: &'a ExperienceIndex,
        library: &'a WorkflowLibrary,
        provider: &'a dyn ChatProvider,
        embedder: &'a dyn Embedder,
        prompts: &'a PromptSet,
        k: usize,
        mode: RetrievalMode,
    ) -> Self {
        GuidedPolicy {
            index,
            library,
            provider,
            embedder,
            prompts,
            k,
            mode,
            degraded: false,
        }
    }

    /// True once the policy has had to act without usable guidance.
    pub fn degraded(&self) -> bool {
        self.degraded
    }

    fn call_or_ask(&self, view: &PolicyView<'_>, tool: &str) -> PolicyAction {
        let (args, missing) = view.fill_args(tool);
        match missing {
            Some(arg) if view.script_remaining => PolicyAction::Ask {
                text: format!("Could you provide the {arg}?"),
            },
            _ => PolicyAction::Call {
                name: tool.to_string(),
                args,
            },
        }
    }

    fn naive_fallback(&self, view: &PolicyView<'_>) -> PolicyAction {
        let succeeded = succeeded_tools(view.events);
        let trace = tool_trace_in(view.events, view.events.len());
        let last_status = |name: &str| {
            trace
                .iter()
                .rev()
                .find(|e| e.name == name)
                .map(|e| e.status)
        };
        let pending: Vec<&ToolSpec> = view
            .tools
            .iter()
            .filter(|t| !succeeded.contains(&t.name))
            .collect();
        if pending.is_empty() {
            return PolicyAction::Stop {
                text: "All requested steps are complete.".into(),
            };
        }
        let pick = pending
            .iter()
            .find(|t| last_status(&t.name) != Some(CallStatus::Error))
            .or_else(|| pending.first())
            .expect("pending non-empty");
        self.call_or_ask(view, &pick.name)
    }
}

impl AgentPolicy for GuidedPolicy<'_> {
    fn name(&self) -> &str {
        "guided"
    }

    fn reset(&mut self) {
        self.degraded = false;
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> Result<PolicyAction, PolicyError> {
        // Randomized retrieval re-seeds per decision point so one episode
        // does not repeat a single draw.
        let mode = match &self.mode {
            RetrievalMode::Random { seed } => RetrievalMode::Random {
                seed: seed.wrapping_add(view.events.len() as u64),
            },
            other => other.clone(),
        };
        let guidance = build_guidance(
            view.events,
            self.index,
            self.library,
            self.provider,
            self.embedder,
            self.prompts,
            self.k,
            &mode,
        );
        if guidance
            .flags
            .iter()
            .any(|f| matches!(f, GuidanceFlag::EmptyIndex | GuidanceFlag::EmptyRetrieval))
        {
            self.degraded = true;
            return Ok(self.naive_fallback(view));
        }

        let last_ok = crate::event_log::last_successful_call_in(view.events, view.events.len())
            .map(|c| c.name);

        for suggestion in &guidance.suggestions {
            if !view.has_tool(&suggestion.action) {
                continue;
            }
            if last_ok.as_deref() == Some(suggestion.action.as_str()) {
                continue;
            }
            if suggestion.all_met() {
                return Ok(self.call_or_ask(view, &suggestion.action));
            }
        }
        let succeeded = succeeded_tools(view.events);
        for suggestion in &guidance.suggestions {
            let Some(predicate) = suggestion.prereqs.first_unmet_structured() else {
                continue;
            };
            match predicate {
                Predicate::ToolSucceeded { tool } | Predicate::ToolCalled { tool } => {
                    if view.has_tool(tool) && !succeeded.contains(tool) {
                        return Ok(self.call_or_ask(view, tool));
                    }
                }
                Predicate::ArgPresent { tool, arg } => {
                    if view.has_tool(tool) {
                        if !view.reveals.contains_key(arg) && view.script_remaining {
                            return Ok(PolicyAction::Ask {
                                text: format!("Could you provide the {arg}?"),
                            });
                        }
                        return Ok(self.call_or_ask(view, tool));
                    }
                }
                Predicate::FlagTrue { .. } => {}
            }
        }
        Ok(self.naive_fallback(view))
    }
}

// ---- Episode driver ----

/// Runs one episode: delivers the opening utterance, then alternates policy
/// decisions with environment steps until all milestones hold, the policy
/// stops, or `max_turns` decisions have been taken. Errors surface as an
/// error tool result plus a backend signal carrying the code.
pub fn run_episode(
    spec: &ScenarioSpec,
    policy: &mut dyn AgentPolicy,
    trial_id: impl Into<String>,
    seed: u64,
) -> Trajectory {
    policy.reset();
    let mut env = Environment::new(spec);
    let mut events: Vec<Event> = Vec::new();
    let mut reveals: RevealMap = RevealMap::new();
    let mut script: VecDeque<&Utterance> = spec.user_script.iter().collect();

    let deliver = |events: &mut Vec<Event>, reveals: &mut RevealMap, u: &Utterance| {
        events.push(Event::user_message(events.len(), u.text.clone()));
        reveals.extend(u.reveals.clone());
    };
    if let Some(opening) = script.pop_front() {
        deliver(&mut events, &mut reveals, opening);
    }

    let mut actions = 0u32;
    let mut errors = 0u32;
    let mut turns = 0usize;
    while !env.all_milestones_met() && turns < spec.max_turns {
        turns += 1;
        let view = PolicyView {
            events: &events,
            tools: &spec.tools,
            reveals: &reveals,
            script_remaining: !script.is_empty(),
            seed,
        };
        let action = match policy.decide(&view) {
            Ok(action) => action,
            Err(PolicyError(message)) => {
                events.push(Event::backend_signal(events.len(), "ERR_POLICY", message));
                break;
            }
        };
        match action {
            PolicyAction::Call { name, args } => {
                actions += 1;
                let call_index = events.len();
                events.push(Event::tool_call(call_index, &name, args.clone()));
                let outcome = env.step(&name, &args);
                events.push(Event::tool_result(
                    events.len(),
                    call_index,
                    outcome.status,
                    outcome.payload,
                ));
                if let Some((code, message)) = outcome.signal {
                    errors += 1;
                    events.push(Event::backend_signal(events.len(), code, message));
                }
            }
            PolicyAction::Ask { text } => {
                events.push(Event::assistant_message(events.len(), text));
                match script.pop_front() {
                    Some(utterance) => deliver(&mut events, &mut reveals, utterance),
                    None => {
                        events.push(Event::user_message(
                            events.len(),
                            "I have nothing further to add.",
                        ));
                    }
                }
            }
            PolicyAction::Stop { text } => {
                events.push(Event::assistant_message(events.len(), text));
                break;
            }
        }
    }

    let milestones_missed = env.milestones_missed();
    Trajectory {
        task_id: spec.scenario_id.clone(),
        trial_id: trial_id.into(),
        events,
        annotation: TerminalAnnotation {
            solved: milestones_missed == 0,
            milestones_total: spec.milestones.len() as u32,
            milestones_missed,
            action_count: actions,
            error_count: errors,
        },
    }
}

/// Baseline policies available for corpus generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Oracle,
    Naive,
}

impl BaselineKind {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Oracle => "oracle",
            BaselineKind::Naive => "naive",
        }
    }
}

/// Generates `trials` trajectories per (scenario, policy) pair, seeded
/// deterministically from `seed`.
pub fn generate_corpus(
    specs: &[ScenarioSpec],
    policies: &[BaselineKind],
    trials: u32,
    seed: u64,
) -> Vec<Trajectory> {
    let mut corpus = Vec::new();
    for spec in specs {
        for kind in policies {
            for trial in 0..trials {
                let trial_seed = seed
                    .wrapping_add(u64::from(trial))
                    .wrapping_mul(0x9e3779b97f4a7c15);
                let trial_id = format!("{}-{trial}", kind.label());
                let trajectory = match kind {
                    BaselineKind::Oracle => {
                        let mut policy = OraclePolicy::for_scenario(spec);
                        run_episode(spec, &mut policy, trial_id, trial_seed)
                    }
                    BaselineKind::Naive => {
                        let mut policy = NaivePolicy::default();
                        run_episode(spec, &mut policy, trial_id, trial_seed)
                    }
                };
                corpus.push(trajectory);
            }
        }
    }
    corpus
}

/// Runs one guided episode over a prepared index and workflow library.
#[allow(clippy::too_many_arguments)]
pub fn run_guided(
    spec: &ScenarioSpec,
    index: &ExperienceIndex,
    library: &WorkflowLibrary,
    provider: &dyn ChatProvider,
    embedder: &dyn Embedder,
    prompts: &PromptSet,
    k: usize,
    mode: RetrievalMode,
    trial_id: impl Into<String>,
    seed: u64,
) -> Trajectory {
    let mut policy = GuidedPolicy::new(index, library, provider, embedder, prompts, k, mode);
    run_episode(spec, &mut policy, trial_id, seed)
}

// ---- Scenario file IO ----

pub fn load_scenario(path: impl AsRef<std::path::Path>) -> Result<ScenarioSpec, SandboxError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SandboxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|source| SandboxError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn save_scenario(
    path: impl AsRef<std::path::Path>,
    spec: &ScenarioSpec,
) -> Result<(), SandboxError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(spec).expect("scenario serializes");
    std::fs::write(path, text).map_err(|source| SandboxError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---- Built-in scenarios ----

fn tool(
    name: &str,
    required_args: &[&str],
    hidden_prereqs: Vec<Predicate>,
    effects: Vec<StateMutation>,
    error_template: &str,
) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        required_args: required_args.iter().map(|s| s.to_string()).collect(),
        hidden_prereqs,
        effects,
        error_template: error_template.into(),
    }
}

fn set(key: &str, value: &str) -> StateMutation {
    StateMutation::Set {
        key: key.into(),
        value: value.into(),
    }
}

fn needs(tool: &str) -> Predicate {
    Predicate::ToolSucceeded { tool: tool.into() }
}

fn flag(key: &str) -> Predicate {
    Predicate::FlagTrue { key: key.into() }
}

fn utterance(text: &str, reveals: &[(&str, &str)]) -> Utterance {
    Utterance {
        text: text.into(),
        reveals: reveals
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    }
}

fn calls(tools: &[&str]) -> Vec<OracleStep> {
    tools
        .iter()
        .map(|t| OracleStep::Call { tool: t.to_string() })
        .collect()
}

/// The five built-in scenarios. Each exercises one hard part of induction or
/// alignment: a single hidden prerequisite, a two-stage prerequisite chain
/// sharing the wifi motif with S1, an argument only revealed when the agent
/// asks, an error-code-conditioned recovery branch, and a repeated action
/// that stresses alignment tie-breaking.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    vec![
        ScenarioSpec {
            scenario_id: "S1".into(),
            tools: vec![
                tool(
                    "send_message",
                    &["recipient", "body"],
                    vec![needs("enable_wifi")],
                    vec![set("message_sent", "true")],
                    "ERR_WIFI_OFF: wifi must be enabled before sending messages",
                ),
                tool(
                    "enable_wifi",
                    &[],
                    vec![],
                    vec![set("wifi", "true")],
                    "ERR_WIFI_HW: wifi hardware unavailable",
                ),
            ],
            milestones: vec![
                MilestonePredicate::ToolSucceeded { tool: "enable_wifi".into() },
                MilestonePredicate::StateEquals { key: "message_sent".into(), value: "true".into() },
            ],
            user_script: vec![utterance(
                "Please turn on wifi and send 'see you at noon' to Alice.",
                &[("recipient", "Alice"), ("body", "see you at noon")],
            )],
            max_turns: 16,
            initial_state: BTreeMap::new(),
            oracle_script: calls(&["enable_wifi", "send_message"]),
        },
        ScenarioSpec {
            scenario_id: "S2".into(),
            tools: vec![
                tool(
                    "sync_photos",
                    &[],
                    vec![needs("sign_in")],
                    vec![set("photos", "synced")],
                    "ERR_NOT_SIGNED_IN: sign in to the cloud account before syncing",
                ),
                tool(
                    "sign_in",
                    &["account"],
                    vec![flag("wifi")],
                    vec![set("session", "true")],
                    "ERR_NO_NETWORK: network unavailable, enable wifi first",
                ),
                tool(
                    "enable_wifi",
                    &[],
                    vec![],
                    vec![set("wifi", "true")],
                    "ERR_WIFI_HW: wifi hardware unavailable",
                ),
            ],
            milestones: vec![
                MilestonePredicate::ToolSucceeded { tool: "sign_in".into() },
                MilestonePredicate::StateEquals { key: "photos".into(), value: "synced".into() },
            ],
            user_script: vec![utterance(
                "Please turn on wifi, sign in to my cloud account 'mira', and sync my photos.",
                &[("account", "mira")],
            )],
            max_turns: 16,
            initial_state: BTreeMap::new(),
            oracle_script: calls(&["enable_wifi", "sign_in", "sync_photos"]),
        },
        ScenarioSpec {
            scenario_id: "S3".into(),
            tools: vec![
                tool(
                    "look_up_booking",
                    &["booking_ref"],
                    vec![],
                    vec![set("booking_loaded", "true")],
                    "ERR_NO_BOOKING: a valid booking reference is required",
                ),
                tool(
                    "apply_refund",
                    &["booking_ref"],
                    vec![needs("look_up_booking")],
                    vec![set("refund", "issued")],
                    "ERR_REFUND_BLOCKED: the booking must be looked up before refunding",
                ),
            ],
            milestones: vec![
                MilestonePredicate::ToolSucceeded { tool: "look_up_booking".into() },
                MilestonePredicate::StateEquals { key: "refund".into(), value: "issued".into() },
            ],
            user_script: vec![
                utterance("I need a refund for my hotel booking.", &[]),
                utterance("The reference is BK-7741.", &[("booking_ref", "BK-7741")]),
            ],
            max_turns: 16,
            initial_state: BTreeMap::new(),
            oracle_script: vec![
                OracleStep::Ask { text: "May I have your booking reference?".into() },
                OracleStep::Call { tool: "look_up_booking".into() },
                OracleStep::Call { tool: "apply_refund".into() },
            ],
        },
        ScenarioSpec {
            scenario_id: "S4".into(),
            tools: vec![
                tool(
                    "submit_payment",
                    &["amount"],
                    vec![flag("card_valid")],
                    vec![set("payment", "confirmed")],
                    "ERR_CARD_EXPIRED: the card on file is expired",
                ),
                tool(
                    "update_card",
                    &["card_number"],
                    vec![],
                    vec![set("card_valid", "true")],
                    "ERR_CARD_INVALID: the card details are invalid",
                ),
            ],
            milestones: vec![
                MilestonePredicate::ToolSucceeded { tool: "update_card".into() },
                MilestonePredicate::StateEquals { key: "payment".into(), value: "confirmed".into() },
            ],
            user_script: vec![utterance(
                "Please pay my electricity bill of 60 with my new card 4111-9999.",
                &[("amount", "60"), ("card_number", "4111-9999")],
            )],
            max_turns: 16,
            initial_state: [("card_valid".to_string(), "false".to_string())].into(),
            oracle_script: calls(&["update_card", "submit_payment"]),
        },
        ScenarioSpec {
            scenario_id: "S5".into(),
            tools: vec![
                tool(
                    "submit_report",
                    &[],
                    vec![needs("purge_cache")],
                    vec![set("report", "filed")],
                    "ERR_CACHE_DIRTY: purge the cache before filing the report",
                ),
                tool(
                    "purge_cache",
                    &[],
                    vec![needs("run_diag")],
                    vec![set("cache", "purged")],
                    "ERR_DIAG_REQUIRED: run diagnostics before purging",
                ),
                tool(
                    "run_diag",
                    &[],
                    vec![flag("powered")],
                    vec![set("diag", "clean")],
                    "ERR_POWERED_OFF: power the device on first",
                ),
                tool(
                    "power_on",
                    &[],
                    vec![],
                    vec![set("powered", "true")],
                    "ERR_POWER_FAULT: power supply fault",
                ),
            ],
            milestones: vec![
                MilestonePredicate::ToolSucceeded { tool: "run_diag".into() },
                MilestonePredicate::StateEquals { key: "report".into(), value: "filed".into() },
            ],
            user_script: vec![utterance(
                "My device is glitching. Run a full diagnostic, purge the cache twice to be safe, and file the report.",
                &[],
            )],
            max_turns: 20,
            initial_state: BTreeMap::new(),
            oracle_script: calls(&[
                "power_on",
                "run_diag",
                "purge_cache",
                "purge_cache",
                "submit_report",
            ]),
        },
    ]
}

pub fn builtin_scenario(id: &str) -> Option<ScenarioSpec> {
    builtin_scenarios().into_iter().find(|s| s.scenario_id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triage::{classify, OutcomeClass};

    fn s1() -> ScenarioSpec {
        builtin_scenario("S1").unwrap()
    }

    #[test]
    fn builtin_scenarios_validate() {
        for spec in builtin_scenarios() {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn hidden_prereq_blocks_and_preserves_state() {
        let spec = s1();
        let mut env = Environment::new(&spec);
        let mut args = BTreeMap::new();
        args.insert("recipient".to_string(), Value::String("Alice".into()));
        args.insert("body".to_string(), Value::String("hi".into()));
        let before = env.state().clone();
        let outcome = env.step("send_message", &args);
        assert_eq!(outcome.status, ToolStatus::Error);
        assert!(outcome.payload.starts_with("ERR_WIFI_OFF"));
        assert_eq!(env.state(), &before);
    }

    #[test]
    fn ordered_calls_succeed_and_mutate_state() {
        let spec = s1();
        let mut env = Environment::new(&spec);
        assert_eq!(env.step("enable_wifi", &BTreeMap::new()).status, ToolStatus::Ok);
        let mut args = BTreeMap::new();
        args.insert("recipient".to_string(), Value::String("Alice".into()));
        args.insert("body".to_string(), Value::String("hi".into()));
        let outcome = env.step("send_message", &args);
        assert_eq!(outcome.status, ToolStatus::Ok);
        assert_eq!(env.state().get("wifi").map(String::as_str), Some("true"));
        assert_eq!(env.state().get("message_sent").map(String::as_str), Some("true"));
        assert!(env.all_milestones_met());
    }

    #[test]
    fn unknown_tool_code() {
        let spec = s1();
        let mut env = Environment::new(&spec);
        let outcome = env.step("xyz", &BTreeMap::new());
        assert_eq!(outcome.status, ToolStatus::Error);
        assert_eq!(outcome.signal.unwrap().0, "ERR_UNKNOWN_TOOL");
    }

    #[test]
    fn missing_required_arg_uses_tool_template() {
        let spec = builtin_scenario("S3").unwrap();
        let mut env = Environment::new(&spec);
        let outcome = env.step("look_up_booking", &BTreeMap::new());
        assert_eq!(outcome.status, ToolStatus::Error);
        assert!(outcome.payload.starts_with("ERR_NO_BOOKING"));
    }

    #[test]
    fn oracle_is_clean_on_every_builtin() {
        for spec in builtin_scenarios() {
            let mut policy = OraclePolicy::for_scenario(&spec);
            let t = run_episode(&spec, &mut policy, "oracle-0", 7);
            assert!(t.validate().is_empty(), "{}: {}", spec.scenario_id, t.validate());
            assert_eq!(
                classify(&t),
                OutcomeClass::CleanSuccess,
                "{} annotation: {:?}",
                spec.scenario_id,
                t.annotation
            );
        }
    }

    #[test]
    fn naive_recovers_on_s1() {
        let spec = s1();
        let mut policy = NaivePolicy::default();
        let t = run_episode(&spec, &mut policy, "naive-0", 7);
        assert_eq!(classify(&t), OutcomeClass::RecoveredSuccess);
        assert!(t.annotation.error_count >= 1);
    }

    #[test]
    fn naive_without_retries_fails_s1() {
        let spec = s1();
        let mut policy = NaivePolicy::new(0);
        let t = run_episode(&spec, &mut policy, "naive-0", 7);
        assert_eq!(classify(&t), OutcomeClass::Failure);
    }

    #[test]
    fn naive_fails_the_deep_chain_scenario() {
        let spec = builtin_scenario("S5").unwrap();
        let mut policy = NaivePolicy::default();
        let t = run_episode(&spec, &mut policy, "naive-0", 7);
        assert_eq!(classify(&t), OutcomeClass::Failure);
        // Diagnostics milestone reached, report milestone missed.
        assert_eq!(t.annotation.milestones_missed, 1);
    }

    #[test]
    fn naive_asks_before_retrying_s3() {
        let spec = builtin_scenario("S3").unwrap();
        let mut policy = NaivePolicy::default();
        let t = run_episode(&spec, &mut policy, "naive-0", 7);
        assert_eq!(classify(&t), OutcomeClass::RecoveredSuccess);
        let asked = t.events.iter().any(|e| {
            matches!(&e.body, crate::event_log::EventBody::AssistantMessage { text } if text.contains("details"))
        });
        assert!(asked);
    }

    #[test]
    fn episodes_are_deterministic() {
        let spec = s1();
        let mut a = NaivePolicy::default();
        let mut b = NaivePolicy::default();
        let ta = run_episode(&spec, &mut a, "naive-0", 7);
        let tb = run_episode(&spec, &mut b, "naive-0", 7);
        assert_eq!(ta, tb);
    }

    #[test]
    fn generated_corpus_counts_and_determinism() {
        let specs = builtin_scenarios();
        let policies = [BaselineKind::Oracle, BaselineKind::Naive];
        let corpus = generate_corpus(&specs, &policies, 10, 7);
        assert_eq!(corpus.len(), 100);
        let again = generate_corpus(&specs, &policies, 10, 7);
        assert_eq!(corpus, again);
        for t in &corpus {
            assert!(t.validate().is_empty());
        }
    }

    #[test]
    fn corpus_covers_outcome_classes() {
        let specs = builtin_scenarios();
        let corpus = generate_corpus(&specs, &[BaselineKind::Oracle, BaselineKind::Naive], 2, 7);
        let classes: std::collections::BTreeSet<OutcomeClass> =
            corpus.iter().map(classify).collect();
        assert!(classes.contains(&OutcomeClass::CleanSuccess));
        assert!(classes.contains(&OutcomeClass::RecoveredSuccess));
        assert!(classes.contains(&OutcomeClass::Failure));
    }

    #[test]
    fn annotation_matches_posthoc_reevaluation() {
        // Self-consistency: replay the event log through a fresh
        // environment and recompute the milestone misses.
        for spec in builtin_scenarios() {
            let mut policy = NaivePolicy::default();
            let t = run_episode(&spec, &mut policy, "naive-0", 7);
            let mut env = Environment::new(&spec);
            let mut actions = 0u32;
            let mut errors = 0u32;
            for event in &t.events {
                if let crate::event_log::EventBody::ToolCall { name, args } = &event.body {
                    actions += 1;
                    let outcome = env.step(name, args);
                    if outcome.status == ToolStatus::Error {
                        errors += 1;
                    }
                }
            }
            assert_eq!(env.milestones_missed(), t.annotation.milestones_missed, "{}", spec.scenario_id);
            assert_eq!(actions, t.annotation.action_count);
            assert_eq!(errors, t.annotation.error_count);
        }
    }

    #[test]
    fn scenario_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.json");
        let spec = s1();
        save_scenario(&path, &spec).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), spec);
    }
}
