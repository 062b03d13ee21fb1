//! Popularity-weighted negative sampling.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{PoiId, PADDING_POI};

/// Draws negatives without replacement with probability proportional to
/// training popularity, never the positive and never padding.
#[derive(Debug, Clone)]
pub struct PopularitySampler {
    ids: Vec<PoiId>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl PopularitySampler {
    /// With `add_one`, every POI in `1..=num_pois` gets one extra pseudo-visit
    /// so unseen POIs can still be drawn.
    pub fn new(popularity: &BTreeMap<PoiId, u64>, num_pois: usize, add_one: bool) -> Result<Self> {
        let (ids, weights): (Vec<PoiId>, Vec<f64>) = if add_one {
            (1..=num_pois as PoiId)
                .map(|p| (p, (popularity.get(&p).copied().unwrap_or(0) + 1) as f64))
                .unzip()
        } else {
            popularity
                .iter()
                .filter(|(&p, &c)| p != PADDING_POI && c > 0)
                .map(|(&p, &c)| (p, c as f64))
                .unzip()
        };
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Sampling(format!("no POI with positive popularity: {e}")))?;
        Ok(PopularitySampler { ids, weights, dist })
    }

    /// POIs with nonzero weight.
    pub fn support(&self) -> usize {
        self.ids.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, positive: PoiId, k: usize, rng: &mut R) -> Result<Vec<PoiId>> {
        let eligible = self.support() - usize::from(self.ids.binary_search(&positive).is_ok());
        if k > eligible {
            return Err(Error::Sampling(format!(
                "need {k} negatives but only {eligible} eligible POIs"
            )));
        }
        // Rejecting repeats and the positive yields the same law as drawing
        // sequentially from the renormalized remainder; fall back to doing
        // exactly that when rejections pile up (heavily skewed weights).
        let mut chosen = Vec::with_capacity(k);
        let mut seen = HashSet::with_capacity(k);
        let budget = 16 * k + 64;
        for _ in 0..budget {
            if chosen.len() == k {
                return Ok(chosen);
            }
            let p = self.ids[self.dist.sample(rng)];
            if p != positive && seen.insert(p) {
                chosen.push(p);
            }
        }
        if chosen.len() == k {
            return Ok(chosen);
        }
        let mut weights = self.weights.clone();
        for (i, id) in self.ids.iter().enumerate() {
            if *id == positive || seen.contains(id) {
                weights[i] = 0.0;
            }
        }
        while chosen.len() < k {
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Sampling(e.to_string()))?;
            let i = dist.sample(rng);
            chosen.push(self.ids[i]);
            weights[i] = 0.0;
        }
        Ok(chosen)
    }
}

/// One-off draw of `k` negatives for `positive`.
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: PoiId,
    popularity: &BTreeMap<PoiId, u64>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<PoiId>> {
    let num_pois = popularity.keys().max().copied().unwrap_or(0) as usize;
    PopularitySampler::new(popularity, num_pois, false)?.sample(positive, k, rng)
}
