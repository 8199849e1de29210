use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::backend::SamplerConfig;
use crate::compose::DEFAULT_LAMBDA;
use crate::encode::DEFAULT_ALPHA;
use crate::layout::LayoutPlan;
use crate::mllm::{EnrichedPromptGroup, KeywordSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Sampler settings plus the two guidance strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub sampler: SamplerConfig,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { sampler: SamplerConfig::default(), alpha: DEFAULT_ALPHA, lambda: DEFAULT_LAMBDA }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(PipelineError::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(PipelineError::LambdaOutOfRange(self.lambda));
        }
        self.sampler.validate()?;
        Ok(())
    }
}

/// Everything a round's image depends on besides the engine itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInputs {
    pub keywords: KeywordSet,
    pub group: EnrichedPromptGroup,
    pub plan: LayoutPlan,
    pub config: GenerationConfig,
}

impl RoundInputs {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("round inputs serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub index: usize,
    pub seed: u64,
    pub input_digest: String,
    /// SHA-256 of the PNG bytes; also the image's store key.
    pub image_ref: String,
    pub inputs: RoundInputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub id: String,
    /// Bumped on every accepted edit or round; used for optimistic writes.
    pub revision: u64,
    /// Content digest of the reference image.
    pub reference_image: String,
    pub base_prompt: String,
    pub keywords: KeywordSet,
    pub group: EnrichedPromptGroup,
    pub plan: LayoutPlan,
    pub config: GenerationConfig,
    pub rounds: Vec<RoundRecord>,
}

pub fn content_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl SessionState {
    pub fn current_inputs(&self) -> RoundInputs {
        RoundInputs {
            keywords: self.keywords.clone(),
            group: self.group.clone(),
            plan: self.plan.clone(),
            config: self.config.clone(),
        }
    }

    /// Joint validity of keywords, group, plan and config.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.keywords.validate()?;
        self.group.validate()?;
        self.config.validate()?;
        if self.base_prompt != self.group.base_prompt {
            return Err(PipelineError::Inconsistent("base prompt differs from group".into()));
        }
        validate_plan(&self.plan, &self.group)
    }
}

pub(crate) fn validate_plan(plan: &LayoutPlan, group: &EnrichedPromptGroup) -> Result<(), PipelineError> {
    let n = group.entities.len();
    if plan.len() != n {
        return Err(PipelineError::Inconsistent(format!("plan has {} entries for {n} entities", plan.len())));
    }
    let mut seen = vec![false; n];
    for e in &plan.entries {
        if e.entity_index >= n || seen[e.entity_index] {
            return Err(PipelineError::Inconsistent(format!("bad plan entity index {}", e.entity_index)));
        }
        seen[e.entity_index] = true;
        if e.entity != group.entities[e.entity_index].name {
            return Err(PipelineError::Inconsistent(format!("plan entry `{}` does not match entity", e.entity)));
        }
    }
    let mut sorted = plan.clone();
    sorted.resort();
    if sorted != *plan {
        return Err(PipelineError::Inconsistent("plan is not in descending-area order".into()));
    }
    Ok(())
}

pub fn serialize_session(state: &SessionState) -> Vec<u8> {
    serde_json::to_vec_pretty(state).expect("session serializes")
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

pub fn deserialize_session(bytes: &[u8]) -> Result<SessionState, PipelineError> {
    let probe: VersionProbe =
        serde_json::from_slice(bytes).map_err(|e| PipelineError::CorruptPayload(e.to_string()))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(PipelineError::SchemaVersionMismatch { found, expected: SCHEMA_VERSION }),
        None => return Err(PipelineError::CorruptPayload("missing schema_version".into())),
    }
    let state: SessionState =
        serde_json::from_slice(bytes).map_err(|e| PipelineError::CorruptPayload(e.to_string()))?;
    state
        .validate()
        .map_err(|e| PipelineError::CorruptPayload(e.to_string()))?;
    Ok(state)
}
