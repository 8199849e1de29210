use serde::{Deserialize, Serialize};

use crate::mllm::KeywordSet;

/// The closed set of changes a user can make between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionEdit {
    ReplaceKeywords { keywords: KeywordSet },
    /// Without a region the new entity alone is sent for layout planning.
    AddEntity {
        name: String,
        sub_prompt: String,
        #[serde(default)]
        region: Option<[f64; 4]>,
    },
    RemoveEntity { name: String },
    EditSubPrompt { name: String, text: String },
    MoveRegion { name: String, region: [f64; 4] },
    SetAlpha { value: f64 },
    SetLambda { value: f64 },
    SetBasePrompt { text: String },
    SetSeed { seed: u64 },
}

impl SessionEdit {
    /// Whether applying this edit may call the MLLM.
    pub fn needs_planner(&self) -> bool {
        matches!(self, SessionEdit::AddEntity { region: None, .. })
    }
}
