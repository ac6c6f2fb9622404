//! Narrow provider contract for chat and embeddings.
//!
//! Every LLM-touching operation in the library goes through [`ChatProvider`]
//! or [`Embedder`]; no other module performs network activity. Deterministic
//! mock implementations live here alongside an HTTP-backed provider that
//! speaks the common chat-completions wire shape and is configured
//! externally (endpoint, model, auth env var, timeout, retries).

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::EmbeddingVector;

mod template_mock;
pub use template_mock::TemplateInducer;

/// Sampling temperature used while collecting diverse experience.
pub const COLLECTION_TEMPERATURE: f64 = 0.9;
/// Sampling temperature for deterministic inference and offline building.
pub const TEST_TEMPERATURE: f64 = 0.0;

/// Binds a request to the prompt role it serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    Summarize,
    Precheck,
    InductAnalyze,
    InductDraft,
    InductRevise,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub tag: RequestTag,
}

impl ChatRequest {
    /// Single user-turn request. Panics if the temperature is outside [0, 2];
    /// all call sites use the module constants.
    pub fn user_prompt(tag: RequestTag, prompt: impl Into<String>, temperature: f64) -> Self {
        assert!(
            (0.0..=2.0).contains(&temperature),
            "temperature {temperature} outside [0, 2]"
        );
        ChatRequest {
            messages: vec![ChatMessage {
                role: ChatRole::User,
                text: prompt.into(),
            }],
            temperature,
            tag,
        }
    }

    /// Concatenated text of all messages; what mocks and tests inspect.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

/// Chat surface. One call is one attempt; wrap with [`Retrying`] for backoff.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

/// Embedding surface: one unit vector per input text, order-preserving.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

// ---- Provider configuration ----

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the credential. The value is
    /// read at request time and never stored in config files.
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub max_retries: u32,
    /// Embeddings endpoint, when distinct from the chat endpoint.
    #[serde(default)]
    pub embed_endpoint: Option<String>,
    /// Requests-per-second budget enforced internally.
    #[serde(default)]
    pub rate_limit_rps: Option<f64>,
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs == 0 {
            return Err("timeout must be positive".into());
        }
        if self.endpoint.is_empty() {
            return Err("endpoint must be set".into());
        }
        Ok(())
    }
}

// ---- Retry decorator ----

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_backoff: Duration::from_millis(200),
        }
    }
}

/// Retries transient failures with exponential backoff, up to
/// `max_retries` additional attempts.
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }
}

impl<P: ChatProvider> ChatProvider for Retrying<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.inner.chat(request) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_transient() && attempts <= self.policy.max_retries => {
                    let backoff = self.policy.base_backoff * 2u32.saturating_pow(attempts - 1);
                    std::thread::sleep(backoff);
                }
                Err(err) if err.is_transient() => {
                    return Err(ProviderError::Unavailable {
                        attempts,
                        message: err.to_string(),
                    });
                }
                Err(err) => return Err(err),
            }
        }
    }
}

// ---- Deterministic mocks ----

/// Table-driven mock: a pure function of (tag, prompt text). Rules match in
/// insertion order; a rule without a `contains` filter matches any prompt
/// with its tag.
#[derive(Default)]
pub struct ScriptedChat {
    rules: Vec<(RequestTag, Option<String>, String)>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        ScriptedChat::default()
    }

    pub fn with_rule(
        mut self,
        tag: RequestTag,
        contains: Option<&str>,
        response: impl Into<String>,
    ) -> Self {
        self.rules.push((tag, contains.map(String::from), response.into()));
        self
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let prompt = request.prompt_text();
        for (tag, contains, response) in &self.rules {
            if *tag != request.tag {
                continue;
            }
            match contains {
                Some(needle) if !prompt.contains(needle) => continue,
                _ => return Ok(response.clone()),
            }
        }
        Err(ProviderError::Rejected {
            status: 404,
            body: format!("no scripted response for tag {:?}", request.tag),
        })
    }
}

/// Fails transiently a fixed number of times, then succeeds. For exercising
/// retry paths.
pub struct FlakyChat {
    failures_before_success: u32,
    response: String,
    attempts: Mutex<u32>,
}

impl FlakyChat {
    pub fn new(failures_before_success: u32, response: impl Into<String>) -> Self {
        FlakyChat {
            failures_before_success,
            response: response.into(),
            attempts: Mutex::new(0),
        }
    }

    pub fn attempts(&self) -> u32 {
        *self.attempts.lock().unwrap()
    }
}

impl ChatProvider for FlakyChat {
    fn chat(&self, _request: &ChatRequest) -> Result<String, ProviderError> {
        let mut attempts = self.attempts.lock().unwrap();
        *attempts += 1;
        if *attempts <= self.failures_before_success {
            Err(ProviderError::Transient(format!("injected failure {attempts}")))
        } else {
            Ok(self.response.clone())
        }
    }
}

// ---- HTTP provider ----

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatWireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatWireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Serialize)]
struct EmbedWireRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedWireResponse {
    data: Vec<EmbedWireItem>,
}

#[derive(Deserialize)]
struct EmbedWireItem {
    embedding: Vec<f64>,
}

/// Chat-completions-compatible HTTP provider. Credentials come from the
/// environment variable named in the config, never from the config itself.
pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    dimension: usize,
    last_request: Mutex<Option<Instant>>,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, embed_dimension: usize) -> Result<Self, ProviderError> {
        config
            .validate()
            .map_err(|e| ProviderError::MalformedResponse(e))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        Ok(HttpProvider {
            config,
            client,
            dimension: embed_dimension,
            last_request: Mutex::new(None),
        })
    }

    fn auth_token(&self) -> Option<String> {
        std::env::var(&self.config.auth_env).ok()
    }

    fn throttle(&self) {
        let Some(rps) = self.config.rate_limit_rps else {
            return;
        };
        if rps <= 0.0 {
            return;
        }
        let min_interval = Duration::from_secs_f64(1.0 / rps);
        let mut last = self.last_request.lock().unwrap();
        if let Some(previous) = *last {
            let elapsed = previous.elapsed();
            if elapsed < min_interval {
                std::thread::sleep(min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, url: &str, body: &impl Serialize) -> Result<String, ProviderError> {
        self.throttle();
        let mut request = self.client.post(url).json(body);
        if let Some(token) = self.auth_token() {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else if status.is_server_error() || status.as_u16() == 429 {
            Err(ProviderError::Transient(format!("status {status}: {text}")))
        } else {
            Err(ProviderError::Rejected {
                status: status.as_u16(),
                body: text,
            })
        }
    }
}

impl ChatProvider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let wire = ChatWireRequest {
            model: &self.config.model_name,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        ChatRole::System => "system",
                        ChatRole::User => "user",
                        ChatRole::Assistant => "assistant",
                    },
                    content: &m.text,
                })
                .collect(),
            temperature: request.temperature,
        };
        let text = self.post(&self.config.endpoint, &wire)?;
        let parsed: ChatWireResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::MalformedResponse("empty choices".into()))
    }
}

impl Embedder for HttpProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = self
            .config
            .embed_endpoint
            .as_deref()
            .unwrap_or(&self.config.endpoint);
        let wire = EmbedWireRequest {
            model: &self.config.model_name,
            input: texts,
        };
        let text = self.post(url, &wire)?;
        let parsed: EmbedWireResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        parsed
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dimension {
                    return Err(ProviderError::DimensionMismatch {
                        expected: self.dimension,
                        got: item.embedding.len(),
                    });
                }
                EmbeddingVector::normalized(item.embedding)
                    .map_err(|e| ProviderError::MalformedResponse(e))
            })
            .collect()
    }
}

/// Key/value args revealed by user turns, as policies see them.
pub type RevealMap = BTreeMap<String, String>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_chat_matches_tag_and_substring() {
        let provider = ScriptedChat::new()
            .with_rule(RequestTag::Summarize, Some("wifi"), "turn on wifi and text John")
            .with_rule(RequestTag::Summarize, None, "generic");
        let req = ChatRequest::user_prompt(RequestTag::Summarize, "user wants wifi on", 0.0);
        assert_eq!(provider.chat(&req).unwrap(), "turn on wifi and text John");
        let req = ChatRequest::user_prompt(RequestTag::Summarize, "something else", 0.0);
        assert_eq!(provider.chat(&req).unwrap(), "generic");
    }

    #[test]
    fn retrying_recovers_from_transient_failures() {
        let provider = Retrying::new(
            FlakyChat::new(2, "ok"),
            RetryPolicy {
                max_retries: 3,
                base_backoff: Duration::ZERO,
            },
        );
        let req = ChatRequest::user_prompt(RequestTag::Other, "x", 0.0);
        assert_eq!(provider.chat(&req).unwrap(), "ok");
        assert_eq!(provider.inner.attempts(), 3);
    }

    #[test]
    fn zero_retries_surfaces_unavailable() {
        let provider = Retrying::new(
            FlakyChat::new(10, "never"),
            RetryPolicy {
                max_retries: 0,
                base_backoff: Duration::ZERO,
            },
        );
        let req = ChatRequest::user_prompt(RequestTag::Other, "x", 0.0);
        assert!(matches!(
            provider.chat(&req),
            Err(ProviderError::Unavailable { attempts: 1, .. })
        ));
    }

    #[test]
    fn rejection_is_not_retried() {
        struct Reject;
        impl ChatProvider for Reject {
            fn chat(&self, _request: &ChatRequest) -> Result<String, ProviderError> {
                Err(ProviderError::Rejected {
                    status: 400,
                    body: "bad".into(),
                })
            }
        }
        let provider = Retrying::new(
            Reject,
            RetryPolicy {
                max_retries: 5,
                base_backoff: Duration::ZERO,
            },
        );
        let req = ChatRequest::user_prompt(RequestTag::Other, "x", 0.0);
        assert!(matches!(
            provider.chat(&req),
            Err(ProviderError::Rejected { status: 400, .. })
        ));
    }

    #[test]
    #[should_panic(expected = "temperature")]
    fn out_of_range_temperature_panics() {
        let _ = ChatRequest::user_prompt(RequestTag::Other, "x", 3.0);
    }
}
