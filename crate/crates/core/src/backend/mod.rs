//! Diffusion backend contract, classifier-free guidance and the sampling loop.

mod toy;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compose::{
    cross_attention, modulated_attention, AttentionWeights, ComposeError, LatentFeatureMap,
};
use crate::encode::{EmbeddingGroup, TokenEmbeddingSequence};
use crate::layout::LayoutPlan;

pub use toy::{ToyBackend, ToyDenoiser, ToySettings, TOY_SITE};

pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_GUIDANCE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend failure: {0}")]
    Failure(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_omega: f64,
    pub seed: u64,
    pub latent_h: usize,
    pub latent_w: usize,
    pub latent_c: usize,
    /// Descent step of the toy update rule.
    pub step_size: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance_omega: DEFAULT_GUIDANCE,
            seed: 0,
            latent_h: 8,
            latent_w: 8,
            latent_c: 4,
            step_size: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.steps < 1 {
            return Err(BackendError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.latent_h < 1 || self.latent_w < 1 || self.latent_c < 1 {
            return Err(BackendError::InvalidConfig("latent dims must be >= 1".into()));
        }
        if !self.guidance_omega.is_finite() || !self.step_size.is_finite() {
            return Err(BackendError::InvalidConfig("guidance and step size must be finite".into()));
        }
        Ok(())
    }
}

/// Predicted noise for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction(pub LatentFeatureMap);

/// `uncond + omega * (cond - uncond)`, evaluated as
/// `(1 - omega) * uncond + omega * cond` so both endpoints are exact.
pub fn cfg_combine(
    uncond: &NoisePrediction,
    cond: &NoisePrediction,
    omega: f64,
) -> Result<NoisePrediction, BackendError> {
    uncond.0.check_same(&cond.0)?;
    let data = uncond
        .0
        .data
        .iter()
        .zip(&cond.0.data)
        .map(|(u, c)| (1.0 - omega) * u + omega * c)
        .collect();
    Ok(NoisePrediction(LatentFeatureMap { data, ..uncond.0.clone() }))
}

/// Callback invoked at every cross-attention site of a denoiser.
pub trait AttentionHook: Send + Sync {
    fn attend(
        &self,
        site: &str,
        z: &LatentFeatureMap,
        weights: &AttentionWeights,
    ) -> Result<LatentFeatureMap, ComposeError>;
}

/// Ordinary cross-attention against one embedding.
pub struct PlainAttention<'a>(pub &'a TokenEmbeddingSequence);

impl AttentionHook for PlainAttention<'_> {
    fn attend(&self, _site: &str, z: &LatentFeatureMap, weights: &AttentionWeights) -> Result<LatentFeatureMap, ComposeError> {
        cross_attention(z, self.0, weights)
    }
}

/// Region-aware modulation at the selected sites; plain complex-prompt
/// attention elsewhere.
pub struct RegionalModulation<'a> {
    pub group: &'a EmbeddingGroup,
    pub plan: &'a LayoutPlan,
    pub lambda: f64,
    /// `None` modulates every site.
    pub sites: Option<&'a [String]>,
}

impl AttentionHook for RegionalModulation<'_> {
    fn attend(&self, site: &str, z: &LatentFeatureMap, weights: &AttentionWeights) -> Result<LatentFeatureMap, ComposeError> {
        let enabled = self.sites.is_none_or(|s| s.iter().any(|x| x == site));
        if enabled {
            modulated_attention(z, self.group, self.plan, weights, self.lambda)
        } else {
            cross_attention(z, &self.group.complex, weights)
        }
    }
}

/// Conditioning for one generation.
#[derive(Clone, Copy)]
pub struct Conditioning<'a> {
    pub group: &'a EmbeddingGroup,
    pub plan: &'a LayoutPlan,
    pub lambda: f64,
    pub sites: Option<&'a [String]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Capabilities {
    pub latent_channels: Option<usize>,
    pub embed_dim: usize,
    pub attention_sites: Vec<String>,
    pub pixels_per_latent: usize,
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn to_png(&self) -> Result<Vec<u8>, BackendError> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| BackendError::Failure(format!("png encode: {e}")))?;
        Ok(out)
    }
}

/// A denoiser plus its solver and decoder. One handle serves one generation
/// at a time.
pub trait DiffusionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Single-branch noise prediction with `hook` applied at every
    /// cross-attention site.
    fn predict(
        &self,
        x_t: &LatentFeatureMap,
        t: usize,
        hook: &dyn AttentionHook,
    ) -> Result<NoisePrediction, BackendError>;

    /// Conditional branch through regional modulation, unconditional branch
    /// through plain attention on the empty-text embedding, then CFG.
    fn denoise_step(
        &self,
        x_t: &LatentFeatureMap,
        t: usize,
        cond: &Conditioning<'_>,
        config: &SamplerConfig,
    ) -> Result<NoisePrediction, BackendError> {
        if x_t.shape() != (config.latent_h, config.latent_w, config.latent_c) {
            return Err(BackendError::InvalidConfig(format!(
                "latent {:?} does not match config",
                x_t.shape()
            )));
        }
        let regional = RegionalModulation {
            group: cond.group,
            plan: cond.plan,
            lambda: cond.lambda,
            sites: cond.sites,
        };
        let eps_cond = self.predict(x_t, t, &regional)?;
        let eps_uncond = self.predict(x_t, t, &PlainAttention(&cond.group.unconditional))?;
        cfg_combine(&eps_uncond, &eps_cond, config.guidance_omega)
    }

    /// Solver update from `x_t` to the next latent.
    fn update(
        &self,
        x_t: &LatentFeatureMap,
        eps: &NoisePrediction,
        t: usize,
        config: &SamplerConfig,
    ) -> Result<LatentFeatureMap, BackendError>;

    fn decode_latent(&self, z: &LatentFeatureMap) -> Result<RgbImage, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub latent: LatentFeatureMap,
    /// Latent after each step, when requested.
    pub trajectory: Option<Vec<LatentFeatureMap>>,
}

/// Seeded Gaussian start, then `steps` solver updates with timesteps
/// counting down from `steps - 1` to 0.
pub fn sample(
    backend: &dyn DiffusionBackend,
    cond: &Conditioning<'_>,
    config: &SamplerConfig,
    keep_trajectory: bool,
) -> Result<SampleOutput, BackendError> {
    config.validate()?;
    let mut x = LatentFeatureMap::gaussian(config.latent_h, config.latent_w, config.latent_c, config.seed);
    let mut trajectory = keep_trajectory.then(|| Vec::with_capacity(config.steps));
    for t in (0..config.steps).rev() {
        let eps = backend.denoise_step(&x, t, cond, config)?;
        x = backend.update(&x, &eps, t, config)?;
        if !x.is_finite() {
            return Err(BackendError::Failure(format!("non-finite latent at step {t}")));
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleOutput { latent: x, trajectory })
}

/// SHA-256 over the little-endian bytes of a latent, as hex.
pub fn latent_checksum(z: &LatentFeatureMap) -> String {
    let mut hasher = Sha256::new();
    for dim in [z.h, z.w, z.c] {
        hasher.update((dim as u64).to_le_bytes());
    }
    for v in &z.data {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
