//! Turn-level working-alliance scoring and session classification.
//!
//! Dialogue turns are embedded, compared by cosine against the embedded
//! items of a 36-statement alliance inventory, and the resulting per-turn
//! score trajectories (optionally with the raw embeddings) are classified by
//! a transformer, LSTM or RNN built on a small autodiff engine.

pub mod alliance;
pub mod cli;
pub mod corpus;
pub mod digest;
pub mod embedding;
pub mod error;
pub mod features;
pub mod inventory;
pub mod models;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, Result};
