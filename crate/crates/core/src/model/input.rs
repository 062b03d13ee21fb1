use crate::error::{Error, Result};
use crate::geo;
use crate::ingest::{CheckIn, DatasetStats, PoiId, SplitDataset, PADDING_POI};

/// A fixed-length, left-padded check-in history.
///
/// Padding occupies a prefix; the most recent real check-in sits at the last
/// index. Padded slots carry POI 0, timestamp 0 and zero coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedHistory {
    pub poi_ids: Vec<PoiId>,
    pub timestamps: Vec<i64>,
    pub norm_coords: Vec<(f64, f64)>,
    pub raw_coords: Vec<(f64, f64)>,
    /// `true` marks a padded slot.
    pub pad_mask: Vec<bool>,
    pub t_last: i64,
}

impl PaddedHistory {
    /// Keeps the most recent `min(len, events.len())` check-ins (which must be
    /// chronological) and left-pads them to `len`.
    pub fn new(events: &[CheckIn], len: usize, stats: &DatasetStats) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Contract("history needs at least one check-in".into()));
        }
        if len == 0 {
            return Err(Error::Contract("history length must be positive".into()));
        }
        let kept = &events[events.len().saturating_sub(len)..];
        let pad = len - kept.len();
        let mut h = PaddedHistory {
            poi_ids: vec![PADDING_POI; pad],
            timestamps: vec![0; pad],
            norm_coords: vec![(0.0, 0.0); pad],
            raw_coords: vec![(0.0, 0.0); pad],
            pad_mask: vec![true; pad],
            t_last: kept[kept.len() - 1].timestamp,
        };
        for c in kept {
            h.poi_ids.push(c.poi);
            h.timestamps.push(c.timestamp);
            h.norm_coords.push(stats.normalize(c.lat, c.lon));
            h.raw_coords.push((c.lat, c.lon));
            h.pad_mask.push(false);
        }
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.poi_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poi_ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|m| !**m).count()
    }

    /// Real POI ids, oldest first.
    pub fn real_pois(&self) -> impl Iterator<Item = PoiId> + '_ {
        self.poi_ids.iter().zip(&self.pad_mask).filter(|(_, m)| !**m).map(|(p, _)| *p)
    }

    pub fn contains(&self, poi: PoiId) -> bool {
        self.real_pois().any(|p| p == poi)
    }

    /// The same history with `extra` additional padded slots in front.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        PaddedHistory {
            poi_ids: prepend(&self.poi_ids, PADDING_POI, extra),
            timestamps: prepend(&self.timestamps, 0, extra),
            norm_coords: prepend(&self.norm_coords, (0.0, 0.0), extra),
            raw_coords: prepend(&self.raw_coords, (0.0, 0.0), extra),
            pad_mask: prepend(&self.pad_mask, true, extra),
            t_last: self.t_last,
        }
    }

    /// Time-gap bucket per position, relative to the last real check-in.
    pub fn time_buckets(&self) -> Vec<usize> {
        self.timestamps
            .iter()
            .map(|&t| geo::bucketize_time(geo::time_gap(t, self.t_last)))
            .collect()
    }

    pub fn validate(&self, num_pois: usize) -> Result<()> {
        let l = self.len();
        if l == 0 {
            return Err(Error::Contract("empty history".into()));
        }
        if [self.timestamps.len(), self.norm_coords.len(), self.raw_coords.len(), self.pad_mask.len()]
            .iter()
            .any(|&n| n != l)
        {
            return Err(Error::Contract("history fields have different lengths".into()));
        }
        if let Some(first_real) = self.pad_mask.iter().position(|m| !*m) {
            if self.pad_mask[first_real..].iter().any(|m| *m) {
                return Err(Error::Contract("padding must be a prefix".into()));
            }
        } else {
            return Err(Error::Contract("history has no real position".into()));
        }
        if self.t_last != self.timestamps[l - 1] {
            return Err(Error::Contract("t_last differs from the last timestamp".into()));
        }
        for (p, m) in self.poi_ids.iter().zip(&self.pad_mask) {
            if *m && *p != PADDING_POI {
                return Err(Error::Contract("padded slot with a real POI id".into()));
            }
            if !*m && (*p == PADDING_POI || *p as usize > num_pois) {
                return Err(Error::Contract(format!("history POI {p} outside 1..={num_pois}")));
            }
        }
        Ok(())
    }
}

/// Candidates to score for one ranking decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSlate {
    pub poi_ids: Vec<PoiId>,
    pub coords: Vec<(f64, f64)>,
}

fn prepend<T: Clone>(v: &[T], fill: T, extra: usize) -> Vec<T> {
    let mut out = vec![fill; extra];
    out.extend_from_slice(v);
    out
}

impl CandidateSlate {
    pub fn new(poi_ids: Vec<PoiId>, coords: Vec<(f64, f64)>) -> Result<Self> {
        let s = CandidateSlate { poi_ids, coords };
        s.check_shape()?;
        Ok(s)
    }

    /// Slate of dataset POIs, coordinates looked up from the dataset.
    pub fn from_dataset(poi_ids: Vec<PoiId>, data: &SplitDataset) -> Result<Self> {
        let coords = poi_ids
            .iter()
            .map(|&p| {
                data.poi(p)
                    .map(|poi| (poi.lat, poi.lon))
                    .ok_or_else(|| Error::Contract(format!("unknown POI {p}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(poi_ids, coords)
    }

    fn check_shape(&self) -> Result<()> {
        if self.poi_ids.is_empty() {
            return Err(Error::Contract("candidate slate is empty".into()));
        }
        if self.poi_ids.len() != self.coords.len() {
            return Err(Error::Contract("candidate ids and coordinates differ in length".into()));
        }
        if self.poi_ids.contains(&PADDING_POI) {
            return Err(Error::Contract("padding POI cannot be a candidate".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poi_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poi_ids.is_empty()
    }

    pub fn validate(&self, num_pois: usize) -> Result<()> {
        self.check_shape()?;
        if let Some(p) = self.poi_ids.iter().find(|&&p| p as usize > num_pois) {
            return Err(Error::Contract(format!("candidate POI {p} outside 1..={num_pois}")));
        }
        Ok(())
    }

    /// Distance bucket for every (candidate, history position) pair, `C × L`
    /// row-major.
    pub fn dist_buckets(&self, history: &PaddedHistory) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() * history.len());
        for &(clat, clon) in &self.coords {
            for &(hlat, hlon) in &history.raw_coords {
                out.push(geo::bucketize_dist(geo::haversine_km(hlat, hlon, clat, clon)));
            }
        }
        out
    }

    /// Reordered copy: `perm[j]` is the source index of new slot `j`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        CandidateSlate {
            poi_ids: perm.iter().map(|&i| self.poi_ids[i]).collect(),
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn stats() -> DatasetStats {
        DatasetStats {
            mu_lat: 1.0,
            sigma_lat: 2.0,
            mu_lon: -1.0,
            sigma_lon: 0.5,
            popularity: BTreeMap::new(),
            num_pois: 9,
            num_users: 1,
        }
    }

    fn ev(poi: PoiId, t: i64) -> CheckIn {
        CheckIn { user: 0, poi, timestamp: t, lat: 3.0, lon: -0.5 }
    }

    #[test]
    fn left_pads_and_normalizes() {
        let h = PaddedHistory::new(&[ev(4, 10), ev(5, 20)], 4, &stats()).unwrap();
        assert_eq!(h.poi_ids, vec![0, 0, 4, 5]);
        assert_eq!(h.pad_mask, vec![true, true, false, false]);
        assert_eq!(h.t_last, 20);
        assert_eq!(h.norm_coords[3], (1.0, 1.0));
        h.validate(9).unwrap();
    }

    #[test]
    fn truncates_to_most_recent() {
        let events: Vec<_> = (1..=6).map(|i| ev(i, i as i64)).collect();
        let h = PaddedHistory::new(&events, 3, &stats()).unwrap();
        assert_eq!(h.poi_ids, vec![4, 5, 6]);
        assert!(h.pad_mask.iter().all(|m| !m));
    }

    #[test]
    fn empty_history_rejected() {
        assert!(PaddedHistory::new(&[], 3, &stats()).is_err());
    }

    #[test]
    fn padding_must_be_prefix() {
        let mut h = PaddedHistory::new(&[ev(4, 10), ev(5, 20)], 3, &stats()).unwrap();
        h.pad_mask = vec![false, true, false];
        assert!(h.validate(9).is_err());
    }

    #[test]
    fn slate_rejects_padding_and_out_of_range() {
        assert!(CandidateSlate::new(vec![0], vec![(0.0, 0.0)]).is_err());
        assert!(CandidateSlate::new(vec![], vec![]).is_err());
        let s = CandidateSlate::new(vec![10], vec![(0.0, 0.0)]).unwrap();
        assert!(s.validate(9).is_err());
    }
}
