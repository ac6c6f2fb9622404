//! Prompt templates with named placeholders.
//!
//! Templates are plain text files shipped under `prompts/`; call sites bind
//! to them through [`PromptKind`], which mirrors the request tags of the
//! provider contract. A directory of override files can replace any subset
//! of the built-ins.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PromptKind {
    TaskSummarize,
    PrereqCheck,
    InductAnalyze,
    InductDraft,
    InductRevise,
    InductOnePass,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::TaskSummarize,
        PromptKind::PrereqCheck,
        PromptKind::InductAnalyze,
        PromptKind::InductDraft,
        PromptKind::InductRevise,
        PromptKind::InductOnePass,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            PromptKind::TaskSummarize => "task_summarize.txt",
            PromptKind::PrereqCheck => "prereq_check.txt",
            PromptKind::InductAnalyze => "induct_analyze.txt",
            PromptKind::InductDraft => "induct_draft.txt",
            PromptKind::InductRevise => "induct_revise.txt",
            PromptKind::InductOnePass => "induct_one_pass.txt",
        }
    }

    fn builtin_text(&self) -> &'static str {
        match self {
            PromptKind::TaskSummarize => include_str!("../prompts/task_summarize.txt"),
            PromptKind::PrereqCheck => include_str!("../prompts/prereq_check.txt"),
            PromptKind::InductAnalyze => include_str!("../prompts/induct_analyze.txt"),
            PromptKind::InductDraft => include_str!("../prompts/induct_draft.txt"),
            PromptKind::InductRevise => include_str!("../prompts/induct_revise.txt"),
            PromptKind::InductOnePass => include_str!("../prompts/induct_one_pass.txt"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read prompt file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, String>,
}

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|k| (*k, k.builtin_text().to_string()))
            .collect();
        PromptSet { templates }
    }

    /// Built-ins overridden by any matching files found in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = PromptSet::builtin();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(kind, text);
            }
        }
        Ok(set)
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        &self.templates[&kind]
    }

    /// Substitutes `{name}` placeholders. Only the provided names are
    /// replaced, so braces in embedded JSON pass through untouched.
    pub fn render(&self, kind: PromptKind, bindings: &[(&str, &str)]) -> String {
        let mut text = self.templates[&kind].clone();
        for (name, value) in bindings {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        text
    }
}
