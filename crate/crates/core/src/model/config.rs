use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of real POIs; tables hold `num_pois + 1` rows (row 0 = padding).
    pub num_pois: usize,
    /// Embedding width `d`.
    pub dim: usize,
    pub heads: usize,
    /// Number of stacked candidate-conditioned blocks.
    pub layers: usize,
    /// Padded history length `L`.
    pub history_len: usize,
    /// Feed-forward hidden width as a multiple of `dim`.
    pub ffn_mult: usize,
    pub use_history_attn: bool,
    pub use_temporal_bias: bool,
    pub use_spatial_bias: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_pois: 0,
            dim: 64,
            heads: 8,
            layers: 2,
            history_len: 100,
            ffn_mult: 2,
            use_history_attn: true,
            use_temporal_bias: true,
            use_spatial_bias: true,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_pois == 0 {
            return fail("num_pois must be at least 1".into());
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim ({}) must be a positive multiple of heads ({})",
                self.dim, self.heads
            ));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.history_len == 0 {
            return fail("history_len must be at least 1".into());
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "num_pois={}", self.num_pois);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "layers={}", self.layers);
        let _ = writeln!(s, "history_len={}", self.history_len);
        let _ = writeln!(s, "ffn_mult={}", self.ffn_mult);
        let _ = writeln!(s, "use_history_attn={}", self.use_history_attn);
        let _ = writeln!(s, "use_temporal_bias={}", self.use_temporal_bias);
        let _ = writeln!(s, "use_spatial_bias={}", self.use_spatial_bias);
        let _ = writeln!(s, "dropout={}", self.dropout);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ModelConfig::default();
        for (k, v) in &kv {
            let bad = || Error::Config(format!("invalid value {v:?} for {k}"));
            match k.as_str() {
                "num_pois" => cfg.num_pois = v.parse().map_err(|_| bad())?,
                "dim" => cfg.dim = v.parse().map_err(|_| bad())?,
                "heads" => cfg.heads = v.parse().map_err(|_| bad())?,
                "layers" => cfg.layers = v.parse().map_err(|_| bad())?,
                "history_len" => cfg.history_len = v.parse().map_err(|_| bad())?,
                "ffn_mult" => cfg.ffn_mult = v.parse().map_err(|_| bad())?,
                "use_history_attn" => cfg.use_history_attn = v.parse().map_err(|_| bad())?,
                "use_temporal_bias" => cfg.use_temporal_bias = v.parse().map_err(|_| bad())?,
                "use_spatial_bias" => cfg.use_spatial_bias = v.parse().map_err(|_| bad())?,
                "dropout" => cfg.dropout = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown model key {other}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
