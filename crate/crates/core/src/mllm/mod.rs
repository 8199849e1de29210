//! Multimodal LLM stage: keyword extraction, prompt enrichment and regional
//! planning over a chat-completion backend.

pub mod chat;
pub mod corpus;
pub mod fixtures;
pub mod group;
pub mod keywords;
pub mod parse;
pub mod templates;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{load_cases, CaseOutput, CorpusCase, Expectation};
pub use chat::{ChatBackend, ChatError, ChatMessage, ChatRequest, HttpChatClient, MockChat, ReplayChat, ScriptedChat};
pub use fixtures::{Fixture, FixtureStore};
pub use group::{Entity, EnrichedPromptGroup, GroupError};
pub use keywords::{classify_keyword, Category, KeywordError, KeywordSet};
pub use parse::{parse_keyword_response, ParseError, RawPlacement};
pub use templates::TemplateKind;

pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmSettings {
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
    pub retries: u32,
    pub max_image_bytes: usize,
}

impl Default for MllmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o".to_string(),
            temperature: 0.2,
            max_tokens: 1024,
            retries: DEFAULT_RETRIES,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MllmError {
    #[error("MLLM transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed MLLM response after {attempts} attempt(s): {reason}")]
    MalformedResponse { attempts: u32, reason: String, raw: String },
    #[error("reference image is {size} bytes, cap is {cap}")]
    OversizeImage { size: usize, cap: usize },
    #[error("reference image does not decode: {0}")]
    InvalidImage(String),
    #[error(transparent)]
    UnknownFixture(ChatError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A validated reference image, ready to inline into chat messages.
#[derive(Debug, Clone)]
pub struct ReferenceImage<'a> {
    bytes: &'a [u8],
    mime: &'static str,
}

impl<'a> ReferenceImage<'a> {
    pub fn new(bytes: &'a [u8], max_bytes: usize) -> Result<Self, MllmError> {
        if bytes.len() > max_bytes {
            return Err(MllmError::OversizeImage { size: bytes.len(), cap: max_bytes });
        }
        let format = image::guess_format(bytes).map_err(|e| MllmError::InvalidImage(e.to_string()))?;
        let mime = match format {
            image::ImageFormat::Png => "image/png",
            image::ImageFormat::Jpeg => "image/jpeg",
            other => return Err(MllmError::InvalidImage(format!("unsupported format {other:?}"))),
        };
        image::load_from_memory_with_format(bytes, format)
            .map_err(|e| MllmError::InvalidImage(e.to_string()))?;
        Ok(Self { bytes, mime })
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime, BASE64.encode(self.bytes))
    }
}

/// Sends `messages`, retrying on transport failures and unparseable replies.
/// Each retry appends one more corrective system line.
fn converse<T>(
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
    kind: TemplateKind,
    messages: Vec<ChatMessage>,
    corrective: &str,
    mut interpret: impl FnMut(&str) -> Result<T, String>,
) -> Result<T, MllmError> {
    let mut request = ChatRequest {
        model: settings.model.clone(),
        messages,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        kind,
    };
    let mut last = None;
    for attempt in 0..=settings.retries {
        if attempt > 0 {
            request.messages.push(ChatMessage::system(corrective));
        }
        let attempts = attempt + 1;
        match chat.complete(&request) {
            Ok(text) => match interpret(&text) {
                Ok(value) => return Ok(value),
                Err(reason) => {
                    log::warn!("{} attempt {attempts}: {reason}", kind.key());
                    last = Some(MllmError::MalformedResponse { attempts, reason, raw: text });
                }
            },
            Err(e) if e.is_retryable() => {
                log::warn!("{} attempt {attempts}: {e}", kind.key());
                last = Some(MllmError::Transport { attempts, message: e.to_string() });
            }
            Err(e) => return Err(MllmError::UnknownFixture(e)),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn extract_with_url(
    data_url: &str,
    category: Category,
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
) -> Result<Vec<String>, MllmError> {
    let messages = vec![
        ChatMessage::system(templates::extraction_instruction(category)),
        ChatMessage::user(
            format!("Identify the {} keywords of this image.", category.label()),
            Some(data_url.to_string()),
        ),
    ];
    converse(
        chat,
        settings,
        TemplateKind::Extract(category),
        messages,
        &templates::extraction_corrective(),
        |text| parse::parse_keyword_list(text).map_err(|e| e.to_string()),
    )
}

/// A single extraction request for `category`; returns the keywords in the
/// order the model gave them.
pub fn extract_category(
    image: &[u8],
    category: Category,
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
) -> Result<Vec<String>, MllmError> {
    let image = ReferenceImage::new(image, settings.max_image_bytes)?;
    extract_with_url(&image.data_url(), category, chat, settings)
}

/// One extraction request per rubric category, merged into a single set.
///
/// Keywords the lexicon recognises go to the lexicon's category; the rest
/// stay in the category that was asked about. A keyword already present in
/// any category is not added again.
pub fn extract_keywords(
    image: &[u8],
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
) -> Result<KeywordSet, MllmError> {
    let image = ReferenceImage::new(image, settings.max_image_bytes)?;
    let data_url = image.data_url();
    let mut set = KeywordSet::default();
    for category in Category::ALL {
        for kw in extract_with_url(&data_url, category, chat, settings)? {
            if set.iter().any(|(_, k)| k.eq_ignore_ascii_case(&kw)) {
                continue;
            }
            let target = match classify_keyword(&kw) {
                Category::Other => category,
                known => known,
            };
            set.insert(target, &kw);
        }
    }
    set.validate().map_err(|e| MllmError::MalformedResponse {
        attempts: 1,
        reason: e.to_string(),
        raw: String::new(),
    })?;
    Ok(set)
}

/// Expands `base_prompt` into a prompt group. The reference image, when
/// given, is attached to the request alongside the keywords.
pub fn enrich_prompt(
    base_prompt: &str,
    keywords: &KeywordSet,
    image: Option<&[u8]>,
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
) -> Result<EnrichedPromptGroup, MllmError> {
    let base_prompt = base_prompt.trim();
    if base_prompt.is_empty() {
        return Err(MllmError::InvalidInput("base prompt is empty".into()));
    }
    keywords
        .validate()
        .map_err(|e| MllmError::InvalidInput(e.to_string()))?;
    let data_url = image
        .map(|b| ReferenceImage::new(b, settings.max_image_bytes).map(|i| i.data_url()))
        .transpose()?;
    let messages = vec![
        ChatMessage::system(templates::enrichment_instruction()),
        ChatMessage::user(templates::enrichment_user_text(base_prompt, keywords), data_url),
    ];
    let group = converse(
        chat,
        settings,
        TemplateKind::Enrich,
        messages,
        &templates::enrichment_corrective(),
        |text| {
            let parsed = parse::parse_enrichment(text).map_err(|e| e.to_string())?;
            let group = EnrichedPromptGroup {
                base_prompt: base_prompt.to_string(),
                complex_prompt: parsed.complex_prompt,
                entities: parsed.entities,
                background_prompt: parsed.background_prompt,
            };
            group.validate().map_err(|e| e.to_string())?;
            Ok(group)
        },
    )?;
    for w in group.word_limit_warnings() {
        log::warn!("{w}");
    }
    Ok(group)
}

/// Asks for one box per entity. Returned placements follow `entities`
/// order and carry the entity names exactly as given; boxes are raw.
pub fn plan_regions(
    entities: &[Entity],
    keywords: &KeywordSet,
    chat: &dyn ChatBackend,
    settings: &MllmSettings,
) -> Result<Vec<RawPlacement>, MllmError> {
    if entities.is_empty() {
        return Err(MllmError::InvalidInput("nothing to plan: no entities".into()));
    }
    let messages = vec![
        ChatMessage::system(templates::planning_instruction()),
        ChatMessage::user(templates::planning_user_text(entities, keywords), None),
    ];
    converse(
        chat,
        settings,
        TemplateKind::Plan,
        messages,
        &templates::planning_corrective(),
        |text| {
            let placements = parse::parse_plan(text).map_err(|e| e.to_string())?;
            if placements.len() != entities.len() {
                return Err(format!(
                    "expected {} boxes, got {}",
                    entities.len(),
                    placements.len()
                ));
            }
            entities
                .iter()
                .map(|e| {
                    let mut hits = placements
                        .iter()
                        .filter(|p| p.entity.eq_ignore_ascii_case(&e.name));
                    match (hits.next(), hits.next()) {
                        (Some(p), None) => Ok(RawPlacement { entity: e.name.clone(), ..p.clone() }),
                        (Some(_), Some(_)) => Err(format!("entity `{}` placed twice", e.name)),
                        (None, _) => Err(format!("missing entity `{}`", e.name)),
                    }
                })
                .collect()
        },
    )
}
