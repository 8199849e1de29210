//! Chat-completion wire types and the backends that speak them.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::fixtures::FixtureStore;
use super::parse::{parse_entity_list, parse_plan, render_plan, RawPlacement};
use super::templates::TemplateKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, content: vec![ContentPart::Text { text: text.into() }] }
    }

    pub fn user(text: impl Into<String>, image_data_url: Option<String>) -> Self {
        let mut content = vec![ContentPart::Text { text: text.into() }];
        if let Some(url) = image_data_url {
            content.push(ContentPart::ImageUrl { image_url: ImageUrl { url } });
        }
        Self { role: Role::User, content }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Request body. `kind` travels with the request for fixture lookup but is
/// not part of the wire format.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
    #[serde(skip)]
    pub kind: TemplateKind,
}

impl ChatRequest {
    /// Content digest: SHA-256 over the template key and the JSON body.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.kind.key().as_bytes());
        hasher.update([0u8]);
        hasher.update(serde_json::to_vec(self).expect("chat request serializes"));
        hex::encode(hasher.finalize())
    }

    pub fn last_user_text(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(ChatMessage::text)
            .unwrap_or_default()
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("chat transport failure: {0}")]
    Transport(String),
    #[error("no fixture for request digest {0}")]
    UnknownFixture(String),
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ChatError::Transport(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;

    /// Cheap reachability check used by health endpoints.
    fn probe(&self) -> bool {
        true
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpChatClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        Ok(Self { client, endpoint: endpoint.into(), api_key })
    }
}

impl ChatBackend for HttpChatClient {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(ChatError::Transport(format!("HTTP {status}: {body}")));
        }
        let body: ChatResponseBody = response
            .json()
            .map_err(|e| ChatError::Transport(format!("undecodable response: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ChatError::Transport("response has no choices".into()))
    }

    fn probe(&self) -> bool {
        self.client
            .get(&self.endpoint)
            .timeout(Duration::from_secs(2))
            .send()
            .is_ok()
    }
}

/// Strict replay: only exact request digests are answered.
pub struct ReplayChat {
    store: FixtureStore,
}

impl ReplayChat {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }
}

impl ChatBackend for ReplayChat {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.store
            .replay_transcript(&request.digest())
            .map(str::to_string)
    }
}

/// Offline stand-in for a real MLLM. Answers exact digests first, then the
/// per-template default fixture. Layout requests whose default fixture does
/// not cover the requested objects get a synthesized left-to-right layout.
pub struct MockChat {
    store: FixtureStore,
}

impl MockChat {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }

    pub fn builtin() -> Self {
        Self::new(FixtureStore::builtin())
    }

    fn synthesize_plan(request: &ChatRequest) -> Result<String, ChatError> {
        let entities = parse_entity_list(&request.last_user_text())
            .map_err(|e| ChatError::UnknownFixture(format!("plan request without objects: {e}")))?;
        let n = entities.len().max(1) as f64;
        let placements: Vec<RawPlacement> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let left = i as f64 / n;
                let right = (i + 1) as f64 / n;
                let center = (left + right) / 2.0;
                let where_ = if entities.len() == 1 {
                    "filling the frame"
                } else if center < 0.34 {
                    "on the left"
                } else if center > 0.66 {
                    "on the right"
                } else {
                    "in the center"
                };
                let (top, bottom) = if entities.len() == 1 { (0.0, 1.0) } else { (0.1, 0.9) };
                RawPlacement {
                    entity: e.name.clone(),
                    raw_box: [left, top, right, bottom],
                    located_sub_prompt: format!("{}, {where_}", e.sub_prompt),
                }
            })
            .collect();
        Ok(render_plan(&placements))
    }
}

impl ChatBackend for MockChat {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let digest = request.digest();
        if let Ok(text) = self.store.replay_transcript(&digest) {
            return Ok(text.to_string());
        }
        let fallback = self.store.default_for(&request.kind.key());
        if request.kind == TemplateKind::Plan {
            let wanted: Vec<String> = parse_entity_list(&request.last_user_text())
                .map(|es| es.into_iter().map(|e| e.name.to_lowercase()).collect())
                .unwrap_or_default();
            let covers = fallback
                .and_then(|text| parse_plan(text).ok())
                .map(|plan| {
                    let mut got: Vec<String> =
                        plan.iter().map(|p| p.entity.to_lowercase()).collect();
                    let mut want = wanted.clone();
                    got.sort();
                    want.sort();
                    got == want
                })
                .unwrap_or(false);
            return match fallback {
                Some(text) if covers => Ok(text.to_string()),
                _ => Self::synthesize_plan(request),
            };
        }
        fallback
            .map(str::to_string)
            .ok_or(ChatError::UnknownFixture(digest))
    }
}

/// Test double that plays back a fixed script of replies and records every
/// request it receives.
pub struct ScriptedChat {
    script: Mutex<VecDeque<Result<String, ChatError>>>,
    fallback: Option<Result<String, ChatError>>,
    requests: Mutex<Vec<ChatRequest>>,
    reachable: bool,
}

impl ScriptedChat {
    pub fn new(script: impl IntoIterator<Item = Result<String, ChatError>>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            fallback: None,
            requests: Mutex::new(Vec::new()),
            reachable: true,
        }
    }

    /// Answers every request with the same reply.
    pub fn always(reply: Result<String, ChatError>) -> Self {
        Self { fallback: Some(reply), ..Self::new([]) }
    }

    pub fn unreachable(mut self) -> Self {
        self.reachable = false;
        self
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.requests.lock().unwrap().push(request.clone());
        match self.script.lock().unwrap().pop_front() {
            Some(reply) => reply,
            None => self
                .fallback
                .clone()
                .unwrap_or_else(|| Err(ChatError::Transport("script exhausted".into()))),
        }
    }

    fn probe(&self) -> bool {
        self.reachable
    }
}
