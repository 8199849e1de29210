//! Named strategy factories. Chat backends, text encoders and diffusion
//! backends are registered by name and picked from configuration at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use crate::backend::{DiffusionBackend, ToyBackend};
use crate::config::AppConfig;
use crate::encode::{MockTextEncoder, TextEncoder};
use crate::mllm::{ChatBackend, FixtureStore, HttpChatClient, MockChat, ReplayChat};
use crate::pipeline::{Engine, PipelineError};

pub type Factory<T> = Box<dyn Fn(&AppConfig) -> Result<Arc<T>, PipelineError> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, factories: BTreeMap::new() }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: impl Into<String>, factory: F) -> &mut Self
    where
        F: Fn(&AppConfig) -> Result<Arc<T>, PipelineError> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, cfg: &AppConfig) -> Result<Arc<T>, PipelineError> {
        let factory = self.factories.get(name).ok_or_else(|| {
            PipelineError::Configuration(format!(
                "unknown {} `{name}` (registered: {})",
                self.kind,
                self.names().join(", ")
            ))
        })?;
        factory(cfg)
    }
}

/// One registry per strategy kind.
pub struct Strategies {
    pub chat: Registry<dyn ChatBackend>,
    pub encoders: Registry<dyn TextEncoder>,
    /// Keys are `toy` or `external:<name>`.
    pub backends: Registry<dyn DiffusionBackend>,
}

fn fixture_store(cfg: &AppConfig) -> Result<Option<FixtureStore>, PipelineError> {
    cfg.mllm
        .fixtures_dir
        .as_deref()
        .map(|dir| {
            FixtureStore::load_dir(dir)
                .map_err(|e| PipelineError::Configuration(format!("fixtures {}: {e}", dir.display())))
        })
        .transpose()
}

impl Strategies {
    pub fn empty() -> Self {
        Self {
            chat: Registry::new("MLLM provider"),
            encoders: Registry::new("text encoder"),
            backends: Registry::new("diffusion backend"),
        }
    }

    pub fn with_builtins() -> Self {
        let mut s = Self::empty();
        s.chat
            .register("mock", |cfg| {
                let mut store = FixtureStore::builtin();
                if let Some(extra) = fixture_store(cfg)? {
                    store.extend(extra);
                }
                Ok(Arc::new(MockChat::new(store)))
            })
            .register("http", |cfg| {
                let endpoint = cfg.mllm.endpoint.clone().ok_or_else(|| {
                    PipelineError::Configuration("the http MLLM provider needs an endpoint".into())
                })?;
                let client = HttpChatClient::new(
                    endpoint,
                    cfg.mllm.api_key.clone(),
                    Duration::from_secs(cfg.mllm.timeout_secs),
                )
                .map_err(|e| PipelineError::Configuration(e.to_string()))?;
                Ok(Arc::new(client))
            })
            .register("replay", |cfg| {
                let store = fixture_store(cfg)?.ok_or_else(|| {
                    PipelineError::Configuration("the replay MLLM provider needs fixtures_dir".into())
                })?;
                Ok(Arc::new(ReplayChat::new(store)))
            });
        s.encoders.register("mock", |cfg| {
            let e = &cfg.backend.encoder;
            Ok(Arc::new(MockTextEncoder::new(e.seed, e.seq_len, e.embed_dim)))
        });
        s.backends.register("toy", |cfg| Ok(Arc::new(ToyBackend::new(cfg.backend.toy.clone()))));
        s
    }

    pub fn build_engine(&self, cfg: &AppConfig) -> Result<Engine, PipelineError> {
        cfg.validate()?;
        let chat = self.chat.build(&cfg.mllm.provider, cfg)?;
        let encoder = self.encoders.build(&cfg.backend.encoder.kind, cfg)?;
        let backend = self.backends.build(&cfg.backend.name, cfg)?;
        let sites = (!cfg.backend.modulated_sites.is_empty()).then(|| cfg.backend.modulated_sites.clone());
        Ok(Engine::new(chat, encoder, backend, cfg.mllm.settings.clone())?.with_modulated_sites(sites))
    }
}

impl Default for Strategies {
    fn default() -> Self {
        Self::with_builtins()
    }
}
