//! Candidate pools for evaluation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PoiId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// The positive plus `size - 1` POIs drawn uniformly without replacement.
    Sampled,
    /// Every POI.
    Full,
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Sampled => "sampled",
            PoolMode::Full => "full",
        })
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(PoolMode::Sampled),
            "full" => Ok(PoolMode::Full),
            other => Err(Error::Config(format!("unknown pool mode {other:?} (expected sampled or full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub mode: PoolMode,
    /// Pool size including the positive; ignored in full mode.
    pub size: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            mode: PoolMode::Sampled,
            size: 100,
            seed: 0,
        }
    }
}

/// Candidate ids and the slot holding the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPool {
    pub poi_ids: Vec<PoiId>,
    pub positive: usize,
}

/// Builds one pool over POIs `1..=num_pois`. Sampled pools place the positive
/// first.
pub fn build_eval_pool<R: Rng + ?Sized>(
    positive: PoiId,
    num_pois: usize,
    mode: PoolMode,
    size: usize,
    rng: &mut R,
) -> Result<EvalPool> {
    if positive == 0 || positive as usize > num_pois {
        return Err(Error::Pool(format!("positive POI {positive} outside 1..={num_pois}")));
    }
    match mode {
        PoolMode::Full => Ok(EvalPool {
            poi_ids: (1..=num_pois as PoiId).collect(),
            positive: positive as usize - 1,
        }),
        PoolMode::Sampled => {
            if size == 0 || size > num_pois {
                return Err(Error::Pool(format!("pool size {size} not in 1..={num_pois}")));
            }
            let mut poi_ids = Vec::with_capacity(size);
            poi_ids.push(positive);
            // sample among the num_pois - 1 other ids, skipping over the positive
            for i in rand::seq::index::sample(rng, num_pois - 1, size - 1) {
                let id = i as PoiId + 1;
                poi_ids.push(if id >= positive { id + 1 } else { id });
            }
            Ok(EvalPool { poi_ids, positive: 0 })
        }
    }
}
