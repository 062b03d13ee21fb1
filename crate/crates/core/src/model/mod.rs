//! The candidate-conditioned ranking network.
//!
//! History check-ins are embedded (POI + positional + calendar + location),
//! optionally passed through one causal self-attention block, and then read
//! by every candidate through `layers` stacked cross-attention blocks whose
//! logits carry a learned time-gap bias and a candidate-relative distance
//! bias. A small MLP over `[h; e_c; h ⊙ e_c]` turns each candidate-specific
//! representation into a logit.

mod checkpoint;
mod config;
mod dump;
mod forward;
mod input;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use dump::AttentionDump;
pub use forward::ForwardCache;
pub use input::{CandidateSlate, PaddedHistory};
pub use network::{positional_encoding, Model};
