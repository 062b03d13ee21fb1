//! Candidate-conditioned spatiotemporal ranking for next-POI recommendation.
//!
//! Each candidate POI queries a user's check-in history through
//! cross-attention whose logits carry learned time-gap and distance biases,
//! yielding one score per candidate. The crate covers the whole pipeline:
//! ingest and splitting, the model with hand-written gradients, training
//! with popularity-sampled negatives, and ranking evaluation.

pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod numeric;
pub mod seed;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use model::{CandidateSlate, Model, ModelConfig, PaddedHistory};
pub use ingest::{CheckIn, DatasetStats, PoiId, SplitDataset, SplitOptions, UserId};
pub use numeric::{ParamTable, Tensor};
