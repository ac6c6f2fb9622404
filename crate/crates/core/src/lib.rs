//! Turns multi-channel agent interaction logs into structured,
//! prerequisite-augmented workflows and serves them back at execution time
//! as stage-aligned, feasibility-checked next-action guidance.
//!
//! The pipeline has three phases. Offline, raw episode logs are triaged
//! into clean successes, recovered successes, and failures
//! ([`triage`]), and contrastive evidence drives a multi-pass inducer that
//! distills each task's trajectories into a workflow with per-action
//! prerequisites and feedback-conditioned transitions ([`induction`],
//! [`workflow_model`]). The induced library is embedded into a cosine index
//! ([`retrieval`]). Online, [`control`] summarizes the live history into a
//! task query, retrieves workflows, aligns the last successful tool call to
//! their planned steps, checks candidate prerequisites against the trace,
//! and emits a compact guidance block.
//!
//! [`sandbox`] provides a deterministic tool environment with hidden
//! prerequisites and scripted users for generating corpora and running
//! end-to-end comparisons; [`metrics`] scores the resulting runs.

pub mod control;
pub mod event_log;
pub mod induction;
pub mod llm_adapter;
pub mod metrics;
pub mod prompts;
pub mod retrieval;
pub mod sandbox;
pub mod triage;
pub mod workflow_model;

pub use control::{build_guidance, GuidanceBlock};
pub use event_log::{load_corpus, save_corpus, Event, Trajectory};
pub use induction::{induce, InductionJob, InductionMode, TraceMode};
pub use llm_adapter::{ChatProvider, Embedder, TemplateInducer};
pub use metrics::RunRecord;
pub use retrieval::{build_index, ExperienceIndex, HashEmbedder, RetrievalMode};
pub use sandbox::{builtin_scenarios, generate_corpus, run_episode, ScenarioSpec};
pub use triage::{build_bundle, classify, TaskBundle};
pub use workflow_model::{Workflow, WorkflowLibrary};
