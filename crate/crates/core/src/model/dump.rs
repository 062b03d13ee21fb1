//! Attention-weight dumps for inspecting what each candidate attends to.

use std::io::Write;

use crate::error::Result;
use crate::ingest::PoiId;
use crate::numeric::Tensor;

use super::forward::ForwardCache;
use super::input::{CandidateSlate, PaddedHistory};
use super::network::Model;

/// Cross-attention weights of every block and head, each `[C × L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub candidates: Vec<PoiId>,
    pub history: Vec<PoiId>,
    /// `weights[layer][head]`.
    pub weights: Vec<Vec<Tensor>>,
}

impl AttentionDump {
    pub(crate) fn from_cache(cache: &ForwardCache, heads: usize, history: &PaddedHistory, slate: &CandidateSlate) -> Self {
        let weights = (0..cache.num_layers())
            .map(|l| (0..heads).map(|h| cache.attention(l, h).clone()).collect())
            .collect();
        AttentionDump {
            candidates: slate.poi_ids.clone(),
            history: history.poi_ids.clone(),
            weights,
        }
    }

    pub fn get(&self, layer: usize, head: usize) -> &Tensor {
        &self.weights[layer][head]
    }

    /// Tab-separated records keyed by `(layer, head, candidate, position)`.
    /// Positions index the padded history, oldest first.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "layer\thead\tcandidate\tposition\thistory_poi\tweight")?;
        for (l, heads) in self.weights.iter().enumerate() {
            for (h, t) in heads.iter().enumerate() {
                for (ci, cand) in self.candidates.iter().enumerate() {
                    for (pos, (hp, wgt)) in self.history.iter().zip(t.row(ci)).enumerate() {
                        writeln!(w, "{l}\t{h}\t{cand}\t{pos}\t{hp}\t{wgt:.6e}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Model {
    /// Per-layer, per-head cross-attention weights in inference mode.
    pub fn attention_dump(&self, history: &PaddedHistory, slate: &CandidateSlate) -> Result<AttentionDump> {
        let cache = self.forward_with(&self.params, history, slate, None)?;
        Ok(AttentionDump::from_cache(&cache, self.config.heads, history, slate))
    }
}
