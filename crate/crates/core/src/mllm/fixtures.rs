//! Transcript fixtures for deterministic replay of MLLM conversations.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chat::ChatError;

/// Digest value marking a fixture as the default reply for its template kind.
pub const ANY_DIGEST: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    /// Template kind key, e.g. `extract.thematic`, `enrich`, `plan`.
    pub key: String,
    pub request_digest: String,
    pub response: String,
}

/// Read-only after construction.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    by_digest: HashMap<String, Fixture>,
    defaults: HashMap<String, Fixture>,
}

const BUILTIN: &[&str] = &[
    include_str!("../../fixtures/mock/extract_artistic_style.json"),
    include_str!("../../fixtures/mock/extract_emotional_atmospheric.json"),
    include_str!("../../fixtures/mock/extract_thematic.json"),
    include_str!("../../fixtures/mock/extract_visual_elements.json"),
    include_str!("../../fixtures/mock/extract_other.json"),
    include_str!("../../fixtures/mock/enrich.json"),
    include_str!("../../fixtures/mock/plan.json"),
];

impl FixtureStore {
    pub fn new(fixtures: impl IntoIterator<Item = Fixture>) -> Self {
        let mut store = Self::default();
        for f in fixtures {
            store.insert(f);
        }
        store
    }

    /// Later fixtures win over earlier ones with the same digest or key.
    pub fn insert(&mut self, f: Fixture) {
        if f.request_digest == ANY_DIGEST {
            self.defaults.insert(f.key.clone(), f);
        } else {
            self.by_digest.insert(f.request_digest.clone(), f);
        }
    }

    pub fn extend(&mut self, other: FixtureStore) {
        self.by_digest.extend(other.by_digest);
        self.defaults.extend(other.defaults);
    }

    /// The "boat on a lake" transcripts shipped with the crate.
    pub fn builtin() -> Self {
        Self::new(
            BUILTIN
                .iter()
                .map(|s| serde_json::from_str::<Fixture>(s).expect("builtin fixture parses")),
        )
    }

    /// Loads every `*.json` file in `dir` (non-recursive, sorted by name).
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut fixtures = Vec::with_capacity(paths.len());
        for p in paths {
            let text = fs::read_to_string(&p)?;
            let f: Fixture = serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display()))
            })?;
            fixtures.push(f);
        }
        Ok(Self::new(fixtures))
    }

    pub fn len(&self) -> usize {
        self.by_digest.len() + self.defaults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn replay_transcript(&self, request_digest: &str) -> Result<&str, ChatError> {
        self.by_digest
            .get(request_digest)
            .map(|f| f.response.as_str())
            .ok_or_else(|| ChatError::UnknownFixture(request_digest.to_string()))
    }

    pub fn default_for(&self, key: &str) -> Option<&str> {
        self.defaults.get(key).map(|f| f.response.as_str())
    }
}
