//! Application configuration: one TOML document with `mllm`, `backend`,
//! `sampler` and `service` sections. Precedence, lowest first: built-in
//! defaults, the file, environment variables, then whatever the caller
//! (usually CLI flags) sets afterwards.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{SamplerConfig, ToySettings};
use crate::compose::DEFAULT_LAMBDA;
use crate::encode::{MockTextEncoder, DEFAULT_ALPHA};
use crate::mllm::MllmSettings;
use crate::pipeline::{GenerationConfig, PipelineError};

pub const ENV_API_KEY: &str = "PREFALIGN_MLLM_API_KEY";
pub const ENV_ENDPOINT: &str = "PREFALIGN_MLLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmConfig {
    /// Registered chat strategy: `mock`, `http` or `replay`.
    pub provider: String,
    pub endpoint: Option<String>,
    /// Prefer the environment variable over writing keys into files.
    pub api_key: Option<String>,
    /// Transcript directory for `replay` (and extra fixtures for `mock`).
    pub fixtures_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    #[serde(flatten)]
    pub settings: MllmSettings,
}

impl Default for MllmConfig {
    fn default() -> Self {
        Self {
            provider: "mock".into(),
            endpoint: None,
            api_key: None,
            fixtures_dir: None,
            timeout_secs: 120,
            settings: MllmSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: String,
    pub seed: u64,
    pub seq_len: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: "mock".into(),
            seed: 0,
            seq_len: MockTextEncoder::DEFAULT_LEN,
            embed_dim: MockTextEncoder::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `toy` or `external:<name>`.
    pub name: String,
    pub encoder: EncoderConfig,
    pub toy: ToySettings,
    /// Attention sites that receive regional modulation; empty means all.
    pub modulated_sites: Vec<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            name: "toy".into(),
            encoder: EncoderConfig::default(),
            toy: ToySettings::default(),
            modulated_sites: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub alpha: f64,
    pub lambda: f64,
    #[serde(flatten)]
    pub sampler: SamplerConfig,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, lambda: DEFAULT_LAMBDA, sampler: SamplerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    pub round_timeout_secs: u64,
    pub cors_origin: Option<String>,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("prefalign-data"),
            round_timeout_secs: 300,
            cors_origin: None,
            max_upload_bytes: 16 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub mllm: MllmConfig,
    pub backend: BackendConfig,
    pub sampler: SamplerSection,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Configuration(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Configuration(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Defaults, then `path` if given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, PipelineError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(key) = var(ENV_API_KEY).filter(|v| !v.is_empty()) {
            self.mllm.api_key = Some(key);
        }
        if let Some(endpoint) = var(ENV_ENDPOINT).filter(|v| !v.is_empty()) {
            self.mllm.endpoint = Some(endpoint);
        }
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            sampler: self.sampler.sampler.clone(),
            alpha: self.sampler.alpha,
            lambda: self.sampler.lambda,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.generation().validate()?;
        if self.backend.encoder.seq_len < 2 || self.backend.encoder.embed_dim < 1 {
            return Err(PipelineError::Configuration("encoder needs seq_len >= 2 and embed_dim >= 1".into()));
        }
        if self.sampler.sampler.latent_c != self.backend.toy.latent_c && self.backend.name == "toy" {
            return Err(PipelineError::Configuration(format!(
                "sampler latent_c {} does not match toy backend latent_c {}",
                self.sampler.sampler.latent_c, self.backend.toy.latent_c
            )));
        }
        Ok(())
    }
}
