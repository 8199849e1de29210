//! Preference-aligned text-to-image orchestration.
//!
//! A multimodal LLM turns a reference image into preference keywords and a
//! base prompt into an entity-level prompt group with a box layout; the
//! keywords are injected into every text embedding by orthogonal rejection,
//! and each entity's sub-prompt is attended only inside its box before the
//! result is blended back into the global cross-attention output.

pub mod backend;
pub mod compose;
pub mod config;
pub mod encode;
pub mod layout;
pub mod mllm;
pub mod pipeline;
pub mod registry;

pub use config::AppConfig;
pub use pipeline::{Engine, PipelineError, SessionEdit, SessionState};
pub use registry::Strategies;
