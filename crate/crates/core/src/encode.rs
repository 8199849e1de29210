//! Text encoding and global preference guidance.
//!
//! The preference embedding is rejected against each prompt embedding token
//! by token, then added back scaled by `alpha`:
//!
//! ```text
//! P_i = T(y_i) + alpha * (v - <v,u>/<u,u> u)     (per token row, v = T(y_key), u = T(y_i))
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mllm::{EnrichedPromptGroup, KeywordSet};

pub const DEFAULT_EPS_NORM: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("non-finite value in encoder output for `{0}`")]
    NonFinite(String),
}

/// An `len x dim` grid of token embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
    pub source_text: String,
}

impl TokenEmbeddingSequence {
    pub fn new(len: usize, dim: usize, data: Vec<f64>, source_text: impl Into<String>) -> Result<Self, EncodeError> {
        let source_text = source_text.into();
        assert_eq!(data.len(), len * dim, "data length must equal len * dim");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncodeError::NonFinite(source_text));
        }
        Ok(Self { len, dim, data, source_text })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.dim)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn check_shape(&self, other: &Self) -> Result<(), EncodeError> {
        if self.shape() != other.shape() {
            return Err(EncodeError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes from each row of `pref` its component along the matching row of
/// `prompt`. Rows where the prompt norm is below `eps_norm` pass through.
pub fn orthogonal_reject(
    pref: &TokenEmbeddingSequence,
    prompt: &TokenEmbeddingSequence,
    eps_norm: f64,
) -> Result<TokenEmbeddingSequence, EncodeError> {
    pref.check_shape(prompt)?;
    let mut data = Vec::with_capacity(pref.data.len());
    for i in 0..pref.len {
        let v = pref.row(i);
        let u = prompt.row(i);
        let uu = dot(u, u);
        if uu.sqrt() < eps_norm {
            data.extend_from_slice(v);
            continue;
        }
        let coef = dot(v, u) / uu;
        data.extend(v.iter().zip(u).map(|(vj, uj)| vj - coef * uj));
    }
    TokenEmbeddingSequence::new(pref.len, pref.dim, data, pref.source_text.clone())
}

/// `prompt + alpha * orthogonal_reject(pref, prompt)`.
pub fn inject_preference(
    prompt: &TokenEmbeddingSequence,
    pref: &TokenEmbeddingSequence,
    alpha: f64,
) -> Result<TokenEmbeddingSequence, EncodeError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(EncodeError::InvalidAlpha(alpha));
    }
    let rejected = orthogonal_reject(pref, prompt, DEFAULT_EPS_NORM)?;
    let data = prompt
        .data
        .iter()
        .zip(&rejected.data)
        .map(|(p, r)| p + alpha * r)
        .collect();
    TokenEmbeddingSequence::new(prompt.len, prompt.dim, data, prompt.source_text.clone())
}

/// Text encoder adapter. Implementations must be usable from several
/// threads at once without mutating shared state.
pub trait TextEncoder: Send + Sync {
    fn name(&self) -> &str;

    /// `(sequence length, embedding dim)`; constant per instance.
    fn shape(&self) -> (usize, usize);

    fn encode(&self, text: &str) -> Result<TokenEmbeddingSequence, EncodeError>;
}

pub const BOS_TOKEN: &str = "<|startoftext|>";
pub const EOS_TOKEN: &str = "<|endoftext|>";
pub const PAD_TOKEN: &str = "<|pad|>";

/// Deterministic stand-in for a CLIP-style encoder.
///
/// Text is lower-cased and split on whitespace, with surrounding punctuation
/// trimmed. Row 0 is the start token, then one row per word, then the end
/// token, then padding up to `len`. Each row is derived from
/// SHA-256(seed LE || position LE || token) used as a ChaCha8 seed, drawing
/// `dim` uniforms in [-1, 1).
#[derive(Debug, Clone)]
pub struct MockTextEncoder {
    seed: u64,
    len: usize,
    dim: usize,
}

impl MockTextEncoder {
    pub const DEFAULT_LEN: usize = 16;
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(seed: u64, len: usize, dim: usize) -> Self {
        assert!(len >= 2 && dim >= 1, "mock encoder needs len >= 2 and dim >= 1");
        Self { seed, len, dim }
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect()
    }

    pub fn token_vector(&self, token: &str, position: usize) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((position as u64).to_le_bytes());
        hasher.update(token.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }
}

impl Default for MockTextEncoder {
    fn default() -> Self {
        Self::new(0, Self::DEFAULT_LEN, Self::DEFAULT_DIM)
    }
}

impl TextEncoder for MockTextEncoder {
    fn name(&self) -> &str {
        "mock"
    }

    fn shape(&self) -> (usize, usize) {
        (self.len, self.dim)
    }

    fn encode(&self, text: &str) -> Result<TokenEmbeddingSequence, EncodeError> {
        let mut words = Self::tokenize(text);
        let budget = self.len - 2;
        if words.len() > budget {
            log::warn!("truncating `{text}` from {} to {budget} tokens", words.len());
            words.truncate(budget);
        }
        let mut tokens: Vec<&str> = Vec::with_capacity(self.len);
        tokens.push(BOS_TOKEN);
        tokens.extend(words.iter().map(String::as_str));
        tokens.push(EOS_TOKEN);
        while tokens.len() < self.len {
            tokens.push(PAD_TOKEN);
        }
        let data = tokens
            .iter()
            .enumerate()
            .flat_map(|(pos, tok)| self.token_vector(tok, pos))
            .collect();
        TokenEmbeddingSequence::new(self.len, self.dim, data, text)
    }
}

/// Preference-injected embeddings for every member of a prompt group.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGroup {
    pub complex: TokenEmbeddingSequence,
    pub per_entity: Vec<TokenEmbeddingSequence>,
    pub background: TokenEmbeddingSequence,
    /// Plain empty-text encoding; never injected.
    pub unconditional: TokenEmbeddingSequence,
    pub alpha: f64,
}

/// Encodes the group and injects the keyword embedding into the complex,
/// entity and background prompts with the same `alpha`.
pub fn build_embedding_group(
    group: &EnrichedPromptGroup,
    keywords: &KeywordSet,
    alpha: f64,
    encoder: &dyn TextEncoder,
) -> Result<EmbeddingGroup, EncodeError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(EncodeError::InvalidAlpha(alpha));
    }
    let pref = encoder.encode(&keywords.preference_text())?;
    let inject = |text: &str| -> Result<TokenEmbeddingSequence, EncodeError> {
        inject_preference(&encoder.encode(text)?, &pref, alpha)
    };
    Ok(EmbeddingGroup {
        complex: inject(&group.complex_prompt)?,
        per_entity: group
            .entities
            .iter()
            .map(|e| inject(&e.sub_prompt))
            .collect::<Result<_, _>>()?,
        background: inject(&group.background_prompt)?,
        unconditional: encoder.encode("")?,
        alpha,
    })
}
