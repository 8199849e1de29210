//! Local cross-attention modulation.
//!
//! Every member of the embedding group attends over the same latent in its
//! own branch. Entity branches are painted over the background branch under
//! their masks in layout order (largest first, so smaller boxes win), and
//! the composite is blended with the complex-prompt branch:
//!
//! ```text
//! z = lambda * attn(z, P_com) + (1 - lambda) * composite(attn(z, P_b), {attn(z, P_i), M_i})
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use thiserror::Error;

use crate::encode::{EmbeddingGroup, TokenEmbeddingSequence};
use crate::layout::{rasterize_mask, LayoutPlan, RegionMask};

pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("plan has {plan} entries but the embedding group has {group} entities")]
    EntityCountMismatch { plan: usize, group: usize },
    #[error("plan references entity {0}, which the embedding group lacks")]
    UnknownEntityIndex(usize),
}

/// `h x w x c` feature grid, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl LatentFeatureMap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w * c, "latent data length must equal h * w * c");
        Self { h, w, c, data }
    }

    /// Standard-normal draw from a ChaCha8 stream seeded with `seed`.
    pub fn gaussian(h: usize, w: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { h, w, c, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.c..(idx + 1) * self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<(), ComposeError> {
        if self.shape() != other.shape() {
            return Err(ComposeError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Single-head projections. Matrices are row-major:
/// `query` is `c x key_dim`, `key` is `d x key_dim`, `value` is `d x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub channels: usize,
    pub embed_dim: usize,
    pub key_dim: usize,
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

impl AttentionWeights {
    pub fn new(
        channels: usize,
        embed_dim: usize,
        key_dim: usize,
        query: Vec<f64>,
        key: Vec<f64>,
        value: Vec<f64>,
    ) -> Result<Self, ComposeError> {
        if query.len() != channels * key_dim
            || key.len() != embed_dim * key_dim
            || value.len() != embed_dim * channels
            || key_dim == 0
        {
            return Err(ComposeError::ShapeMismatch("attention weight dimensions".into()));
        }
        if query.iter().chain(&key).chain(&value).any(|v| !v.is_finite()) {
            return Err(ComposeError::ShapeMismatch("non-finite attention weight".into()));
        }
        Ok(Self { channels, embed_dim, key_dim, query, key, value })
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`.
    pub fn seeded(channels: usize, embed_dim: usize, key_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
                .collect::<Vec<f64>>()
        };
        let query = draw(channels * key_dim, channels);
        let key = draw(embed_dim * key_dim, embed_dim);
        let value = draw(embed_dim * channels, embed_dim);
        Self { channels, embed_dim, key_dim, query, key, value }
    }
}

/// `(rows x inner) * (inner x cols)`, row-major.
fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let a_row = &a[i * inner..(i + 1) * inner];
        let o_row = &mut out[i * cols..(i + 1) * cols];
        for (k, &av) in a_row.iter().enumerate() {
            let b_row = &b[k * cols..(k + 1) * cols];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn check_attention_shapes(
    z: &LatentFeatureMap,
    prompt: &TokenEmbeddingSequence,
    weights: &AttentionWeights,
) -> Result<(), ComposeError> {
    if z.c != weights.channels || prompt.dim() != weights.embed_dim {
        return Err(ComposeError::ShapeMismatch(format!(
            "latent c={} / embed d={} vs weights c={} d={}",
            z.c,
            prompt.dim(),
            weights.channels,
            weights.embed_dim
        )));
    }
    if prompt.is_empty() {
        return Err(ComposeError::ShapeMismatch("empty token sequence".into()));
    }
    Ok(())
}

/// Row-major `cells x tokens` matrix of `Softmax(Q K^T / sqrt(key_dim))`.
pub fn attention_probabilities(
    z: &LatentFeatureMap,
    prompt: &TokenEmbeddingSequence,
    weights: &AttentionWeights,
) -> Result<Vec<f64>, ComposeError> {
    check_attention_shapes(z, prompt, weights)?;
    let n = z.cells();
    let tokens = prompt.len();
    let dk = weights.key_dim;
    let q = matmul(&z.data, &weights.query, n, z.c, dk);
    let k = matmul(prompt.as_slice(), &weights.key, tokens, prompt.dim(), dk);
    let scale = 1.0 / (dk as f64).sqrt();

    let mut probs = vec![0.0; n * tokens];
    for (i, row) in probs.chunks_mut(tokens).enumerate() {
        let qi = &q[i * dk..(i + 1) * dk];
        for (j, s) in row.iter_mut().enumerate() {
            let kj = &k[j * dk..(j + 1) * dk];
            *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        // shift by the row max so exp never overflows
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in row.iter_mut() {
            *s /= total;
        }
    }
    Ok(probs)
}

/// `Softmax(Q K^T / sqrt(key_dim)) V` with `Q = z W_q`, `K = P W_k`, `V = P W_v`.
pub fn cross_attention(
    z: &LatentFeatureMap,
    prompt: &TokenEmbeddingSequence,
    weights: &AttentionWeights,
) -> Result<LatentFeatureMap, ComposeError> {
    let probs = attention_probabilities(z, prompt, weights)?;
    let tokens = prompt.len();
    let v = matmul(prompt.as_slice(), &weights.value, tokens, prompt.dim(), z.c);
    Ok(LatentFeatureMap {
        h: z.h,
        w: z.w,
        c: z.c,
        data: matmul(&probs, &v, z.cells(), tokens, z.c),
    })
}

/// Copies `background`, then for each entry in order overwrites the cells
/// its mask covers. Later entries win.
pub fn composite_latents(
    background: &LatentFeatureMap,
    entries: &[(&LatentFeatureMap, &RegionMask)],
) -> Result<LatentFeatureMap, ComposeError> {
    let mut out = background.clone();
    for (latent, mask) in entries {
        background.check_same(latent)?;
        if (mask.grid.h, mask.grid.w) != (background.h, background.w) {
            return Err(ComposeError::ShapeMismatch(format!(
                "mask {}x{} vs latent {}x{}",
                mask.grid.h, mask.grid.w, background.h, background.w
            )));
        }
        let c = background.c;
        for (idx, _) in mask.grid.cells.iter().enumerate().filter(|(_, set)| **set) {
            out.data[idx * c..(idx + 1) * c].copy_from_slice(latent.cell(idx));
        }
    }
    Ok(out)
}

/// `lambda * complex + (1 - lambda) * composed`.
pub fn blend(
    complex: &LatentFeatureMap,
    composed: &LatentFeatureMap,
    lambda: f64,
) -> Result<LatentFeatureMap, ComposeError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ComposeError::LambdaOutOfRange(lambda));
    }
    complex.check_same(composed)?;
    let data = complex
        .data
        .iter()
        .zip(&composed.data)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(LatentFeatureMap { h: complex.h, w: complex.w, c: complex.c, data })
}

/// Every intermediate of one modulated attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationTrace {
    pub complex: LatentFeatureMap,
    pub background: LatentFeatureMap,
    /// Entity branches and masks in plan order.
    pub entities: Vec<(usize, LatentFeatureMap, RegionMask)>,
    pub composite: LatentFeatureMap,
    pub output: LatentFeatureMap,
}

pub fn modulated_attention_traced(
    z: &LatentFeatureMap,
    group: &EmbeddingGroup,
    plan: &LayoutPlan,
    weights: &AttentionWeights,
    lambda: f64,
) -> Result<ModulationTrace, ComposeError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ComposeError::LambdaOutOfRange(lambda));
    }
    if plan.len() != group.per_entity.len() {
        return Err(ComposeError::EntityCountMismatch { plan: plan.len(), group: group.per_entity.len() });
    }
    let complex = cross_attention(z, &group.complex, weights)?;
    let background = cross_attention(z, &group.background, weights)?;
    let mut entities = Vec::with_capacity(plan.len());
    for entry in &plan.entries {
        let prompt = group
            .per_entity
            .get(entry.entity_index)
            .ok_or(ComposeError::UnknownEntityIndex(entry.entity_index))?;
        let branch = cross_attention(z, prompt, weights)?;
        let mask = rasterize_mask(&entry.region, z.h, z.w);
        entities.push((entry.entity_index, branch, mask));
    }
    let refs: Vec<(&LatentFeatureMap, &RegionMask)> = entities.iter().map(|(_, l, m)| (l, m)).collect();
    let composite = composite_latents(&background, &refs)?;
    let output = blend(&complex, &composite, lambda)?;
    Ok(ModulationTrace { complex, background, entities, composite, output })
}

pub fn modulated_attention(
    z: &LatentFeatureMap,
    group: &EmbeddingGroup,
    plan: &LayoutPlan,
    weights: &AttentionWeights,
    lambda: f64,
) -> Result<LatentFeatureMap, ComposeError> {
    modulated_attention_traced(z, group, plan, weights, lambda).map(|t| t.output)
}

fn write_flat(path: &Path, header: serde_json::Value, values: impl Iterator<Item = [u8; 8]>) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for v in values {
        f.write_all(&v)?;
    }
    Ok(())
}

impl ModulationTrace {
    /// Debug dump: one file per branch and mask, each a single JSON header
    /// line followed by little-endian f64 values.
    pub fn dump(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let latent = |name: &str, z: &LatentFeatureMap| {
            write_flat(
                &dir.join(format!("{name}.bin")),
                json!({"name": name, "dtype": "<f8", "shape": [z.h, z.w, z.c]}),
                z.data.iter().map(|v| v.to_le_bytes()),
            )
        };
        latent("complex", &self.complex)?;
        latent("background", &self.background)?;
        latent("composite", &self.composite)?;
        latent("output", &self.output)?;
        for (idx, z, mask) in &self.entities {
            latent(&format!("entity_{idx}"), z)?;
            write_flat(
                &dir.join(format!("mask_{idx}.bin")),
                json!({"name": format!("mask_{idx}"), "dtype": "<f8", "shape": [mask.grid.h, mask.grid.w], "box": mask.region.to_array()}),
                mask.grid.cells.iter().map(|b| if *b { 1.0f64 } else { 0.0 }.to_le_bytes()),
            )?;
        }
        Ok(())
    }
}
