//! End-to-end orchestration and the multi-round session state machine.

mod edit;
mod session;

use std::sync::Arc;

use thiserror::Error;

pub use edit::SessionEdit;
pub use session::{
    content_digest, deserialize_session, serialize_session, GenerationConfig, RoundInputs, RoundRecord,
    SessionState, SCHEMA_VERSION,
};

use crate::backend::{sample, BackendError, Conditioning, DiffusionBackend};
use crate::compose::ComposeError;
use crate::encode::{build_embedding_group, EmbeddingGroup, EncodeError, TextEncoder};
use crate::layout::{order_plan, validate_and_normalize, LayoutEntry, LayoutError, LocatedPrompt, Region};
use crate::mllm::{
    enrich_prompt, extract_keywords, plan_regions, ChatBackend, Entity, GroupError, KeywordError, MllmError,
    MllmSettings, RawPlacement,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mllm(#[from] MllmError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("invalid region: {0}")]
    InvalidRegion(#[from] LayoutError),
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid keywords: {0}")]
    InvalidKeywords(#[from] KeywordError),
    #[error("invalid prompt group: {0}")]
    InvalidGroup(#[from] GroupError),
    #[error("inconsistent session: {0}")]
    Inconsistent(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt session payload: {0}")]
    CorruptPayload(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Configuration(String),
}

impl From<ComposeError> for PipelineError {
    fn from(e: ComposeError) -> Self {
        match e {
            ComposeError::LambdaOutOfRange(l) => PipelineError::LambdaOutOfRange(l),
            other => PipelineError::Backend(BackendError::Compose(other)),
        }
    }
}

/// The strategies one generation runs on.
#[derive(Clone)]
pub struct Engine {
    pub chat: Arc<dyn ChatBackend>,
    pub encoder: Arc<dyn TextEncoder>,
    pub backend: Arc<dyn DiffusionBackend>,
    pub mllm: MllmSettings,
    /// Attention sites that get regional modulation; `None` means all.
    pub modulated_sites: Option<Vec<String>>,
}

fn located_entry(entity: &Entity, placement: &RawPlacement) -> Result<(Region, LocatedPrompt), PipelineError> {
    let region = validate_and_normalize(placement.raw_box)?;
    log::debug!("planned `{}` at {:?}", entity.name, region.to_array());
    Ok((region, LocatedPrompt { entity: entity.name.clone(), prompt: placement.located_sub_prompt.clone() }))
}

impl Engine {
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        encoder: Arc<dyn TextEncoder>,
        backend: Arc<dyn DiffusionBackend>,
        mllm: MllmSettings,
    ) -> Result<Self, PipelineError> {
        let caps = backend.capabilities();
        let (_, dim) = encoder.shape();
        if caps.embed_dim != dim {
            return Err(PipelineError::Configuration(format!(
                "encoder `{}` produces dim {dim}, backend `{}` expects {}",
                encoder.name(),
                backend.name(),
                caps.embed_dim
            )));
        }
        Ok(Self { chat, encoder, backend, mllm, modulated_sites: None })
    }

    pub fn with_modulated_sites(mut self, sites: Option<Vec<String>>) -> Self {
        self.modulated_sites = sites;
        self
    }

    /// Understand, enrich, plan. Nothing is returned unless every stage succeeds.
    pub fn create_session(
        &self,
        id: impl Into<String>,
        reference_image: &[u8],
        base_prompt: &str,
        config: GenerationConfig,
    ) -> Result<SessionState, PipelineError> {
        let base_prompt = base_prompt.trim();
        if base_prompt.is_empty() {
            return Err(PipelineError::InvalidInput("base prompt is empty".into()));
        }
        config.validate()?;
        let chat = self.chat.as_ref();
        let keywords = extract_keywords(reference_image, chat, &self.mllm)?;
        let group = enrich_prompt(base_prompt, &keywords, Some(reference_image), chat, &self.mllm)?;
        let (regions, prompts): (Vec<Region>, Vec<LocatedPrompt>) = if group.entities.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let placements = plan_regions(&group.entities, &keywords, chat, &self.mllm)?;
            group
                .entities
                .iter()
                .zip(&placements)
                .map(|(e, p)| located_entry(e, p))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .unzip()
        };
        let plan = order_plan(&regions, &prompts)?;
        let state = SessionState {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            revision: 0,
            reference_image: content_digest(reference_image),
            base_prompt: base_prompt.to_string(),
            keywords,
            group,
            plan,
            config,
            rounds: Vec::new(),
        };
        state.validate()?;
        Ok(state)
    }

    /// Pure transition. Only `AddEntity` without a region talks to the MLLM,
    /// and then only about the new entity.
    pub fn apply_edit(&self, state: &SessionState, edit: &SessionEdit) -> Result<SessionState, PipelineError> {
        let mut next = state.clone();
        let find = |name: &str| {
            state
                .group
                .entity_index(name)
                .ok_or_else(|| PipelineError::UnknownEntity(name.to_string()))
        };
        match edit {
            SessionEdit::ReplaceKeywords { keywords } => {
                keywords.validate()?;
                next.keywords = keywords.clone();
            }
            SessionEdit::AddEntity { name, sub_prompt, region } => {
                let entity = Entity { name: name.trim().to_string(), sub_prompt: sub_prompt.trim().to_string() };
                if state.group.entity_index(&entity.name).is_some() {
                    return Err(GroupError::DuplicateEntity(entity.name).into());
                }
                next.group.entities.push(entity.clone());
                next.group.validate()?;
                let index = next.group.entities.len() - 1;
                let (region, prompt) = match region {
                    Some(raw) => (validate_and_normalize(*raw)?, entity.sub_prompt.clone()),
                    None => {
                        let placements = plan_regions(
                            std::slice::from_ref(&entity),
                            &state.keywords,
                            self.chat.as_ref(),
                            &self.mllm,
                        )?;
                        let (region, located) = located_entry(&entity, &placements[0])?;
                        (region, located.prompt)
                    }
                };
                next.plan.entries.push(LayoutEntry { entity: entity.name, entity_index: index, region, prompt });
                next.plan.resort();
            }
            SessionEdit::RemoveEntity { name } => {
                let index = find(name)?;
                next.group.entities.remove(index);
                next.plan.entries.retain(|e| e.entity_index != index);
                for e in next.plan.entries.iter_mut().filter(|e| e.entity_index > index) {
                    e.entity_index -= 1;
                }
                next.plan.resort();
            }
            SessionEdit::EditSubPrompt { name, text } => {
                let index = find(name)?;
                let text = text.trim();
                if text.is_empty() {
                    return Err(PipelineError::InvalidInput("sub-prompt is empty".into()));
                }
                let old = std::mem::replace(&mut next.group.entities[index].sub_prompt, text.to_string());
                if let Some(entry) = next.plan.entries.iter_mut().find(|e| e.entity_index == index) {
                    entry.prompt = match entry.prompt.strip_prefix(old.as_str()) {
                        Some(location) => format!("{text}{location}"),
                        None => text.to_string(),
                    };
                }
            }
            SessionEdit::MoveRegion { name, region } => {
                let index = find(name)?;
                let region = validate_and_normalize(*region)?;
                if let Some(entry) = next.plan.entries.iter_mut().find(|e| e.entity_index == index) {
                    entry.region = region;
                }
                next.plan.resort();
            }
            SessionEdit::SetAlpha { value } => next.config.alpha = *value,
            SessionEdit::SetLambda { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(PipelineError::LambdaOutOfRange(*value));
                }
                next.config.lambda = *value;
            }
            SessionEdit::SetBasePrompt { text } => {
                let text = text.trim();
                if text.is_empty() {
                    return Err(PipelineError::InvalidInput("base prompt is empty".into()));
                }
                next.base_prompt = text.to_string();
                next.group.base_prompt = text.to_string();
            }
            SessionEdit::SetSeed { seed } => next.config.sampler.seed = *seed,
        }
        next.validate()?;
        next.revision += 1;
        Ok(next)
    }

    /// Applies `edits` in order; the first failure discards all of them.
    pub fn apply_edits(&self, state: &SessionState, edits: &[SessionEdit]) -> Result<SessionState, PipelineError> {
        let mut current = state.clone();
        for edit in edits {
            current = self.apply_edit(&current, edit)?;
        }
        Ok(current)
    }

    pub fn embeddings(&self, inputs: &RoundInputs) -> Result<EmbeddingGroup, PipelineError> {
        Ok(build_embedding_group(&inputs.group, &inputs.keywords, inputs.config.alpha, self.encoder.as_ref())?)
    }

    /// Encode, sample and decode. Returns PNG bytes.
    pub fn render(&self, inputs: &RoundInputs) -> Result<Vec<u8>, PipelineError> {
        inputs.config.validate()?;
        let embeddings = self.embeddings(inputs)?;
        let cond = Conditioning {
            group: &embeddings,
            plan: &inputs.plan,
            lambda: inputs.config.lambda,
            sites: self.modulated_sites.as_deref(),
        };
        let out = sample(self.backend.as_ref(), &cond, &inputs.config.sampler, false)?;
        let image = self.backend.decode_latent(&out.latent)?;
        Ok(image.to_png()?)
    }

    pub fn run_round(&self, state: &SessionState) -> Result<(SessionState, Vec<u8>), PipelineError> {
        state.validate()?;
        let inputs = state.current_inputs();
        let png = self.render(&inputs)?;
        let mut next = state.clone();
        next.rounds.push(RoundRecord {
            index: state.rounds.len(),
            seed: inputs.config.sampler.seed,
            input_digest: inputs.digest(),
            image_ref: content_digest(&png),
            inputs,
        });
        next.revision += 1;
        Ok((next, png))
    }

    /// Re-renders a stored round; returns the PNG and whether its digest
    /// matches the recorded image.
    pub fn replay_round(&self, record: &RoundRecord) -> Result<(Vec<u8>, bool), PipelineError> {
        if record.inputs.digest() != record.input_digest {
            return Err(PipelineError::Inconsistent(format!("round {} inputs do not match their digest", record.index)));
        }
        let png = self.render(&record.inputs)?;
        let ok = content_digest(&png) == record.image_ref;
        Ok((png, ok))
    }
}
