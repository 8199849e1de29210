use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ENTITIES: usize = 8;
pub const SUB_PROMPT_WORD_LIMIT: usize = 30;
pub const COMPLEX_PROMPT_WORD_LIMIT: usize = 40;
pub const BACKGROUND_WORD_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub sub_prompt: String,
}

/// The enriched prompt bundle: complex prompt, per-entity sub-prompts and an
/// object-free background prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedPromptGroup {
    pub base_prompt: String,
    pub complex_prompt: String,
    pub entities: Vec<Entity>,
    pub background_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("too many entities ({0} > {MAX_ENTITIES})")]
    TooManyEntities(usize),
    #[error("entity name is empty")]
    EmptyName,
    #[error("duplicate entity name `{0}`")]
    DuplicateEntity(String),
    #[error("background prompt mentions entity `{0}`")]
    BackgroundMentionsEntity(String),
    #[error("{0} prompt is empty")]
    EmptyPrompt(&'static str),
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

impl EnrichedPromptGroup {
    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities
            .iter()
            .position(|e| e.name.eq_ignore_ascii_case(name.trim()))
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        if self.base_prompt.trim().is_empty() {
            return Err(GroupError::EmptyPrompt("base"));
        }
        if self.complex_prompt.trim().is_empty() {
            return Err(GroupError::EmptyPrompt("complex"));
        }
        if self.background_prompt.trim().is_empty() {
            return Err(GroupError::EmptyPrompt("background"));
        }
        if self.entities.len() > MAX_ENTITIES {
            return Err(GroupError::TooManyEntities(self.entities.len()));
        }
        let background = self.background_prompt.to_lowercase();
        for (i, e) in self.entities.iter().enumerate() {
            if e.name.trim().is_empty() {
                return Err(GroupError::EmptyName);
            }
            if e.sub_prompt.trim().is_empty() {
                return Err(GroupError::EmptyPrompt("sub"));
            }
            if self.entities[..i]
                .iter()
                .any(|o| o.name.eq_ignore_ascii_case(&e.name))
            {
                return Err(GroupError::DuplicateEntity(e.name.clone()));
            }
            if background.contains(&e.name.to_lowercase()) {
                return Err(GroupError::BackgroundMentionsEntity(e.name.clone()));
            }
        }
        Ok(())
    }

    /// Advisory word-limit violations. Never fatal.
    pub fn word_limit_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = word_count(&self.complex_prompt);
        if n > COMPLEX_PROMPT_WORD_LIMIT {
            out.push(format!("complex prompt has {n} words (limit {COMPLEX_PROMPT_WORD_LIMIT})"));
        }
        let n = word_count(&self.background_prompt);
        if n > BACKGROUND_WORD_LIMIT {
            out.push(format!("background prompt has {n} words (limit {BACKGROUND_WORD_LIMIT})"));
        }
        for e in &self.entities {
            let n = word_count(&e.sub_prompt);
            if n > SUB_PROMPT_WORD_LIMIT {
                out.push(format!(
                    "sub-prompt for `{}` has {n} words (limit {SUB_PROMPT_WORD_LIMIT})",
                    e.name
                ));
            }
        }
        out
    }
}
