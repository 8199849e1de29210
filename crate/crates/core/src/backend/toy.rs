//! Seeded, untrained stand-in for a latent U-Net with a single genuine
//! cross-attention site. Small enough for millisecond tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AttentionHook, BackendError, Capabilities, DiffusionBackend, NoisePrediction, RgbImage, SamplerConfig};
use crate::compose::{AttentionWeights, LatentFeatureMap};

pub const TOY_SITE: &str = "mid";
const PIXELS_PER_LATENT: usize = 8;
const BIAS_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySettings {
    pub weight_seed: u64,
    pub latent_c: usize,
    pub hidden: usize,
    pub key_dim: usize,
    pub embed_dim: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self { weight_seed: 0, latent_c: 4, hidden: 8, key_dim: 8, embed_dim: 32 }
    }
}

/// Per-cell input projection, one cross-attention site, per-cell output
/// projection, plus a timestep bias:
/// `eps(x, t) = attn(x W_in) W_out + b_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub settings: ToySettings,
    /// `latent_c x hidden`
    pub embed_in: Vec<f64>,
    pub attention: AttentionWeights,
    /// `hidden x latent_c`
    pub embed_out: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

impl ToyDenoiser {
    /// Weights come from stream 0 of a ChaCha8 generator keyed by
    /// `weight_seed`; the bias for timestep `t` comes from stream `t + 1`.
    pub fn new(settings: ToySettings) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.weight_seed);
        let c = settings.latent_c;
        let hidden = settings.hidden;
        let embed_in = gaussian_vec(&mut rng, c * hidden, 1.0 / (c as f64).sqrt());
        let attention = AttentionWeights::seeded(hidden, settings.embed_dim, settings.key_dim, &mut rng);
        let embed_out = gaussian_vec(&mut rng, hidden * c, 1.0 / (hidden as f64).sqrt());
        Self { settings, embed_in, attention, embed_out }
    }

    pub fn timestep_bias(&self, t: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.weight_seed);
        rng.set_stream(t as u64 + 1);
        gaussian_vec(&mut rng, self.settings.latent_c, BIAS_SCALE)
    }

    fn project(z: &LatentFeatureMap, matrix: &[f64], out_c: usize) -> LatentFeatureMap {
        let mut out = LatentFeatureMap::zeros(z.h, z.w, out_c);
        for idx in 0..z.cells() {
            let src = z.cell(idx);
            let dst = &mut out.data[idx * out_c..(idx + 1) * out_c];
            for (k, &v) in src.iter().enumerate() {
                for (d, m) in dst.iter_mut().zip(&matrix[k * out_c..(k + 1) * out_c]) {
                    *d += v * m;
                }
            }
        }
        out
    }

    pub fn forward(
        &self,
        x_t: &LatentFeatureMap,
        t: usize,
        hook: &dyn AttentionHook,
    ) -> Result<NoisePrediction, BackendError> {
        if x_t.c != self.settings.latent_c {
            return Err(BackendError::InvalidConfig(format!(
                "toy denoiser expects {} latent channels, got {}",
                self.settings.latent_c, x_t.c
            )));
        }
        let hidden = Self::project(x_t, &self.embed_in, self.settings.hidden);
        let attended = hook.attend(TOY_SITE, &hidden, &self.attention)?;
        let mut eps = Self::project(&attended, &self.embed_out, self.settings.latent_c);
        let bias = self.timestep_bias(t);
        for cell in eps.data.chunks_mut(self.settings.latent_c) {
            for (v, b) in cell.iter_mut().zip(&bias) {
                *v += b;
            }
        }
        Ok(NoisePrediction(eps))
    }
}

pub struct ToyBackend {
    denoiser: ToyDenoiser,
}

impl ToyBackend {
    pub fn new(settings: ToySettings) -> Self {
        Self { denoiser: ToyDenoiser::new(settings) }
    }

    pub fn denoiser(&self) -> &ToyDenoiser {
        &self.denoiser
    }
}

impl DiffusionBackend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            latent_channels: Some(self.denoiser.settings.latent_c),
            embed_dim: self.denoiser.settings.embed_dim,
            attention_sites: vec![TOY_SITE.to_string()],
            pixels_per_latent: PIXELS_PER_LATENT,
        }
    }

    fn predict(&self, x_t: &LatentFeatureMap, t: usize, hook: &dyn AttentionHook) -> Result<NoisePrediction, BackendError> {
        self.denoiser.forward(x_t, t, hook)
    }

    /// Plain deterministic descent: `x - step_size * eps`.
    fn update(
        &self,
        x_t: &LatentFeatureMap,
        eps: &NoisePrediction,
        _t: usize,
        config: &SamplerConfig,
    ) -> Result<LatentFeatureMap, BackendError> {
        x_t.check_same(&eps.0)?;
        let data = x_t
            .data
            .iter()
            .zip(&eps.0.data)
            .map(|(x, e)| x - config.step_size * e)
            .collect();
        Ok(LatentFeatureMap { data, ..x_t.clone() })
    }

    /// Channels 0..3 map to RGB via `127.5 + 127.5 v` (clamped); fewer than
    /// three channels repeat the last one. Each latent cell becomes an 8x8
    /// pixel block.
    fn decode_latent(&self, z: &LatentFeatureMap) -> Result<RgbImage, BackendError> {
        if !z.is_finite() {
            return Err(BackendError::Failure("cannot decode non-finite latent".into()));
        }
        let width = z.w * PIXELS_PER_LATENT;
        let height = z.h * PIXELS_PER_LATENT;
        let mut pixels = vec![0u8; width * height * 3];
        for py in 0..height {
            for px in 0..width {
                let cell = z.cell((py / PIXELS_PER_LATENT) * z.w + px / PIXELS_PER_LATENT);
                for ch in 0..3 {
                    let v = cell[ch.min(z.c - 1)];
                    pixels[(py * width + px) * 3 + ch] = (127.5 + 127.5 * v).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(RgbImage { width: width as u32, height: height as u32, pixels })
    }
}
