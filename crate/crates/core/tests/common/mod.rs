//! Straight-line reference implementations used as test oracles. They are
//! written from the formulas, not from the library code: plain index
//! arithmetic, no shared helpers.
#![allow(dead_code, clippy::needless_range_loop)]

use prefalign_core::backend::{SamplerConfig, ToyDenoiser};
use prefalign_core::compose::{AttentionWeights, LatentFeatureMap};
use prefalign_core::encode::{EmbeddingGroup, TokenEmbeddingSequence};
use prefalign_core::layout::{validate_and_normalize, LayoutEntry, LayoutPlan, Region};
use prefalign_core::mllm::{EnrichedPromptGroup, Entity, KeywordSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REFERENCE_PNG: &[u8] = include_bytes!("../../fixtures/reference.png");

/// `out[i][c] = sum_j softmax_j(q_i . k_j / sqrt(dk)) * v_j[c]`
#[allow(clippy::too_many_arguments)]
pub fn attention(
    z: &[f64],
    cells: usize,
    c: usize,
    p: &[f64],
    tokens: usize,
    d: usize,
    w: &AttentionWeights,
) -> Vec<f64> {
    let dk = w.key_dim;
    let mut out = vec![0.0; cells * c];
    for i in 0..cells {
        let mut q = vec![0.0; dk];
        for a in 0..dk {
            for k in 0..c {
                q[a] += z[i * c + k] * w.query[k * dk + a];
            }
        }
        let mut scores = vec![0.0; tokens];
        for j in 0..tokens {
            let mut key = vec![0.0; dk];
            for a in 0..dk {
                for e in 0..d {
                    key[a] += p[j * d + e] * w.key[e * dk + a];
                }
            }
            let mut s = 0.0;
            for a in 0..dk {
                s += q[a] * key[a];
            }
            scores[j] = s / (dk as f64).sqrt();
        }
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..tokens {
            let pj = exps[j] / total;
            for ch in 0..c {
                let mut v = 0.0;
                for e in 0..d {
                    v += p[j * d + e] * w.value[e * c + ch];
                }
                out[i * c + ch] += pj * v;
            }
        }
    }
    out
}

pub fn attention_on(z: &LatentFeatureMap, p: &TokenEmbeddingSequence, w: &AttentionWeights) -> Vec<f64> {
    let (tokens, d) = p.shape();
    attention(&z.data, z.h * z.w, z.c, p.as_slice(), tokens, d, w)
}

/// Cells whose center lies in `[l, r) x [t, b)`; if none, the one nearest
/// the box center (first in row-major order).
pub fn raster(b: [f64; 4], h: usize, w: usize) -> Vec<bool> {
    let mut cells = vec![false; h * w];
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64;
            let y = (r as f64 + 0.5) / h as f64;
            if b[0] <= x && x < b[2] && b[1] <= y && y < b[3] {
                cells[r * w + c] = true;
                any = true;
            }
        }
    }
    if !any {
        let cx = (b[0] + b[2]) / 2.0;
        let cy = (b[1] + b[3]) / 2.0;
        let mut best = 0;
        let mut best_d = f64::MAX;
        for r in 0..h {
            for c in 0..w {
                let x = (c as f64 + 0.5) / w as f64;
                let y = (r as f64 + 0.5) / h as f64;
                let dd = (x - cx).powi(2) + (y - cy).powi(2);
                if dd < best_d {
                    best_d = dd;
                    best = r * w + c;
                }
            }
        }
        cells[best] = true;
    }
    cells
}

/// Indices ordered by descending area; among equal areas, lower index first.
/// Selection sort, so independent of any library sort.
pub fn area_order(areas: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..areas.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (areas[left[k]], areas[left[best]]);
            if a > b || (a == b && left[k] < left[best]) {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Full regional modulation from the formulas.
pub fn modulated(
    z: &LatentFeatureMap,
    group: &EmbeddingGroup,
    plan: &LayoutPlan,
    w: &AttentionWeights,
    lambda: f64,
) -> Vec<f64> {
    let cells = z.h * z.w;
    let c = z.c;
    let complex = attention_on(z, &group.complex, w);
    let mut comp = attention_on(z, &group.background, w);
    for e in &plan.entries {
        let branch = attention_on(z, &group.per_entity[e.entity_index], w);
        let mask = raster(e.region.to_array(), z.h, z.w);
        for i in 0..cells {
            if mask[i] {
                comp[i * c..(i + 1) * c].copy_from_slice(&branch[i * c..(i + 1) * c]);
            }
        }
    }
    complex.iter().zip(&comp).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

fn project(x: &[f64], cells: usize, cin: usize, m: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cells * cout];
    for i in 0..cells {
        for o in 0..cout {
            for k in 0..cin {
                out[i * cout + o] += x[i * cin + k] * m[k * cout + o];
            }
        }
    }
    out
}

/// One toy branch: `attn(x W_in) W_out + b_t`, with `attend` standing in for
/// the attention site.
pub fn toy_branch(
    den: &ToyDenoiser,
    x: &LatentFeatureMap,
    t: usize,
    attend: impl Fn(&LatentFeatureMap) -> Vec<f64>,
) -> Vec<f64> {
    let s = &den.settings;
    let cells = x.h * x.w;
    let hidden = LatentFeatureMap::from_vec(x.h, x.w, s.hidden, project(&x.data, cells, s.latent_c, &den.embed_in, s.hidden));
    let att = attend(&hidden);
    let mut eps = project(&att, cells, s.hidden, &den.embed_out, s.latent_c);
    let bias = den.timestep_bias(t);
    for i in 0..cells {
        for ch in 0..s.latent_c {
            eps[i * s.latent_c + ch] += bias[ch];
        }
    }
    eps
}

/// CFG-combined noise for one step.
pub fn toy_step(
    den: &ToyDenoiser,
    x: &LatentFeatureMap,
    t: usize,
    group: &EmbeddingGroup,
    plan: &LayoutPlan,
    lambda: f64,
    omega: f64,
) -> Vec<f64> {
    let cond = toy_branch(den, x, t, |h| modulated(h, group, plan, &den.attention, lambda));
    let unc = toy_branch(den, x, t, |h| attention_on(h, &group.unconditional, &den.attention));
    unc.iter().zip(&cond).map(|(u, c)| u + omega * (c - u)).collect()
}

pub fn toy_sample(den: &ToyDenoiser, group: &EmbeddingGroup, plan: &LayoutPlan, lambda: f64, cfg: &SamplerConfig) -> Vec<f64> {
    let mut x = LatentFeatureMap::gaussian(cfg.latent_h, cfg.latent_w, cfg.latent_c, cfg.seed);
    for t in (0..cfg.steps).rev() {
        let eps = toy_step(den, &x, t, group, plan, lambda, cfg.guidance_omega);
        let data = x.data.iter().zip(&eps).map(|(a, e)| a - cfg.step_size * e).collect();
        x = LatentFeatureMap::from_vec(x.h, x.w, x.c, data);
    }
    x.data
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> TokenEmbeddingSequence {
    TokenEmbeddingSequence::new(len, dim, uniform_vec(rng, len * dim), "random").unwrap()
}

/// A random box with positive area, sometimes thinner than one cell so the
/// snapping path is exercised.
pub fn random_region(rng: &mut ChaCha8Rng) -> Region {
    loop {
        let thin = rng.random_bool(0.2);
        let l = rng.random_range(0.0..0.95);
        let t = rng.random_range(0.0..0.95);
        let (wd, ht) = if thin {
            (rng.random_range(0.001..0.05), rng.random_range(0.001..0.05))
        } else {
            (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0))
        };
        if let Ok(r) = validate_and_normalize([l, t, l + wd, t + ht]) {
            return r;
        }
    }
}

/// `n` entities with random boxes, plan in descending-area order.
pub fn random_plan(rng: &mut ChaCha8Rng, n: usize) -> LayoutPlan {
    let mut plan = LayoutPlan {
        entries: (0..n)
            .map(|i| LayoutEntry {
                entity: format!("entity{i}"),
                entity_index: i,
                region: random_region(rng),
                prompt: format!("entity {i}"),
            })
            .collect(),
    };
    plan.resort();
    plan
}

pub fn random_group(rng: &mut ChaCha8Rng, n: usize, len: usize, dim: usize) -> EmbeddingGroup {
    EmbeddingGroup {
        complex: random_seq(rng, len, dim),
        per_entity: (0..n).map(|_| random_seq(rng, len, dim)).collect(),
        background: random_seq(rng, len, dim),
        unconditional: random_seq(rng, len, dim),
        alpha: 0.0,
    }
}

const WORDS: &[&str] = &[
    "boat", "lake", "misty", "red", "fox", "tower", "golden", "quiet", "storm", "garden", "old", "bridge",
    "cat", "lantern", "river", "snow", "bright", "forest", "small", "tall",
];

pub fn random_phrase(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_prompt_group(rng: &mut ChaCha8Rng) -> (EnrichedPromptGroup, KeywordSet) {
    let n = rng.random_range(0..=4);
    let entities = (0..n)
        .map(|i| Entity { name: format!("thing{i}"), sub_prompt: random_phrase(rng, 4) })
        .collect();
    let group = EnrichedPromptGroup {
        base_prompt: random_phrase(rng, 3),
        complex_prompt: random_phrase(rng, 10),
        entities,
        background_prompt: random_phrase(rng, 5),
    };
    let mut keywords = KeywordSet::default();
    keywords.artistic_style.push("Oil Painting".into());
    keywords.emotional_atmospheric.push(random_phrase(rng, 2));
    (group, keywords)
}
