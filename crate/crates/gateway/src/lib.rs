//! HTTP gateway and command-line front end for the prefalign engine.

pub mod cli;
pub mod error;
pub mod server;
pub mod store;

pub use error::{classify, ApiError, ErrorBody};
pub use server::{router, AppState, Health, RoundCreated};
