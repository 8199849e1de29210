//! Transcript corpus for checking the response parsers: each case is one
//! canned model reply for one stage, with what a correct parse must yield
//! (compliant cases) or the kind of defect it carries (malformed cases).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    enrich_prompt, extract_category, plan_regions, ChatBackend, EnrichedPromptGroup, Entity, KeywordSet,
    MllmError, MllmSettings, RawPlacement, TemplateKind,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    #[serde(default)]
    pub keywords: Option<Vec<String>>,
    /// Entity names in order.
    #[serde(default)]
    pub entities: Option<Vec<String>>,
    /// Raw boxes by entity name.
    #[serde(default)]
    pub boxes: Option<BTreeMap<String, [f64; 4]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    /// Template kind key (`extract.<category>`, `enrich`, `plan`).
    pub kind: String,
    /// `overlong`, `mislabeled`, `truncated`, ...; absent for compliant cases.
    #[serde(default)]
    pub defect: Option<String>,
    #[serde(default)]
    pub base_prompt: Option<String>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    /// Keywords sent with enrichment and planning requests; a single
    /// artistic-style keyword when absent.
    #[serde(default)]
    pub keywords: Option<KeywordSet>,
    pub response: String,
    #[serde(default)]
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseOutput {
    Keywords(Vec<String>),
    Group(EnrichedPromptGroup),
    Placements(Vec<RawPlacement>),
}

impl CaseOutput {
    pub fn check(&self, expect: &Expectation) -> Result<(), String> {
        match self {
            CaseOutput::Keywords(got) => {
                if let Some(want) = &expect.keywords {
                    if got != want {
                        return Err(format!("keywords {got:?} != {want:?}"));
                    }
                }
            }
            CaseOutput::Group(group) => {
                if let Some(want) = &expect.entities {
                    let got: Vec<&str> = group.entities.iter().map(|e| e.name.as_str()).collect();
                    if got != *want {
                        return Err(format!("entities {got:?} != {want:?}"));
                    }
                }
            }
            CaseOutput::Placements(placements) => {
                if let Some(want) = &expect.boxes {
                    for (name, b) in want {
                        let p = placements
                            .iter()
                            .find(|p| &p.entity == name)
                            .ok_or_else(|| format!("no placement for `{name}`"))?;
                        if p.raw_box != *b {
                            return Err(format!("`{name}` box {:?} != {b:?}", p.raw_box));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl CorpusCase {
    pub fn is_compliant(&self) -> bool {
        self.defect.is_none()
    }

    /// Runs the stage this case belongs to against `chat`. `image` is only
    /// used by extraction.
    pub fn run(&self, image: &[u8], chat: &dyn ChatBackend, settings: &MllmSettings) -> Result<CaseOutput, MllmError> {
        let kind = TemplateKind::from_key(&self.kind)
            .ok_or_else(|| MllmError::InvalidInput(format!("unknown case kind `{}`", self.kind)))?;
        let keywords = self.keywords.clone().unwrap_or_else(|| KeywordSet {
            artistic_style: vec!["Oil Painting".into()],
            ..Default::default()
        });
        match kind {
            TemplateKind::Extract(category) => extract_category(image, category, chat, settings).map(CaseOutput::Keywords),
            TemplateKind::Enrich => {
                let base = self.base_prompt.as_deref().unwrap_or("an image");
                enrich_prompt(base, &keywords, None, chat, settings).map(CaseOutput::Group)
            }
            TemplateKind::Plan => plan_regions(&self.entities, &keywords, chat, settings)
                .map(CaseOutput::Placements),
        }
    }
}

/// Loads every `*.json` case under `dir`, sorted by file name.
pub fn load_cases(dir: &Path) -> std::io::Result<Vec<CorpusCase>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display()))
            })
        })
        .collect()
}
