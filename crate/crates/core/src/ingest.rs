//! Check-in parsing, threshold filtering, chronological splitting and the
//! dataset statistics the model and the negative sampler depend on.
//!
//! Input format: UTF-8 text, one check-in per line,
//! `user_id,poi_id,timestamp,lat,lon`. Blank lines and lines starting with
//! `#` are skipped. Timestamps are integer Unix seconds (UTC).

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
/// Dense POI id. `0` is reserved for padding and never names a real venue.
pub type PoiId = u32;

pub const PADDING_POI: PoiId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user: UserId,
    pub poi: PoiId,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

/// Parsed check-ins with dense ids and the tables mapping them back to the
/// identifiers found in the source file.
#[derive(Debug, Clone, Default)]
pub struct ParsedCheckins {
    pub checkins: Vec<CheckIn>,
    /// `user_labels[u]` is the source identifier of dense user `u`.
    pub user_labels: Vec<String>,
    /// `poi_labels[p - 1]` is the source identifier of dense POI `p`.
    pub poi_labels: Vec<String>,
}

fn valid_coords(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

/// Parses a check-in stream, remapping identifiers to dense ranges in order
/// of first appearance (users from 0, POIs from 1).
pub fn parse_checkins<R: BufRead>(source: R) -> Result<ParsedCheckins> {
    let mut out = ParsedCheckins::default();
    let mut users: HashMap<String, UserId> = HashMap::new();
    let mut pois: HashMap<String, PoiId> = HashMap::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 comma-separated fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str, raw: &str| Error::Parse {
            line: lineno,
            msg: format!("invalid {what} {raw:?}"),
        };
        if fields[0].is_empty() {
            return Err(bad("user_id", fields[0]));
        }
        if fields[1].is_empty() {
            return Err(bad("poi_id", fields[1]));
        }
        let timestamp: i64 = fields[2].parse().map_err(|_| bad("timestamp", fields[2]))?;
        let lat: f64 = fields[3].parse().map_err(|_| bad("lat", fields[3]))?;
        let lon: f64 = fields[4].parse().map_err(|_| bad("lon", fields[4]))?;
        if !valid_coords(lat, lon) {
            return Err(Error::Validation {
                line: lineno,
                msg: format!("coordinates ({lat}, {lon}) out of range"),
            });
        }

        let next_user = users.len() as UserId;
        let user = *users.entry(fields[0].to_string()).or_insert_with(|| {
            out.user_labels.push(fields[0].to_string());
            next_user
        });
        let next_poi = pois.len() as PoiId + 1;
        let poi = *pois.entry(fields[1].to_string()).or_insert_with(|| {
            out.poi_labels.push(fields[1].to_string());
            next_poi
        });
        out.checkins.push(CheckIn {
            user,
            poi,
            timestamp,
            lat,
            lon,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mu_lat: f64,
    pub sigma_lat: f64,
    pub mu_lon: f64,
    pub sigma_lon: f64,
    /// Training check-in counts per POI. POIs never visited in training and
    /// the padding id have no entry.
    pub popularity: BTreeMap<PoiId, u64>,
    pub num_pois: usize,
    pub num_users: usize,
}

impl DatasetStats {
    pub fn normalize(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (lat - self.mu_lat) / self.sigma_lat,
            (lon - self.mu_lon) / self.sigma_lon,
        )
    }

    pub fn popularity_of(&self, poi: PoiId) -> u64 {
        self.popularity.get(&poi).copied().unwrap_or(0)
    }
}

/// Population mean/std of training coordinates and training popularity.
pub fn compute_stats(train: &[Vec<CheckIn>], num_users: usize, num_pois: usize) -> Result<DatasetStats> {
    let n = train.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        return Err(Error::EmptyDataset("no training check-ins".into()));
    }
    let all = || train.iter().flatten();
    let nf = n as f64;
    let mu_lat = all().map(|c| c.lat).sum::<f64>() / nf;
    let mu_lon = all().map(|c| c.lon).sum::<f64>() / nf;
    let sigma_lat = (all().map(|c| (c.lat - mu_lat).powi(2)).sum::<f64>() / nf).sqrt();
    let sigma_lon = (all().map(|c| (c.lon - mu_lon).powi(2)).sum::<f64>() / nf).sqrt();
    if !(sigma_lat > 0.0 && sigma_lon > 0.0) {
        return Err(Error::Degenerate(format!(
            "zero coordinate variance (sigma_lat={sigma_lat}, sigma_lon={sigma_lon})"
        )));
    }
    let mut popularity = BTreeMap::new();
    for c in all() {
        *popularity.entry(c.poi).or_insert(0u64) += 1;
    }
    popularity.remove(&PADDING_POI);
    Ok(DatasetStats {
        mu_lat,
        sigma_lat,
        mu_lon,
        sigma_lon,
        popularity,
        num_pois,
        num_users,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: PoiId,
    /// Mean coordinates over the venue's retained check-ins.
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequences {
    pub id: UserId,
    /// Chronological training check-ins.
    pub train: Vec<CheckIn>,
    /// The most recent check-ins, held out for evaluation.
    pub eval: Vec<CheckIn>,
}

impl UserSequences {
    pub fn len(&self) -> usize {
        self.train.len() + self.eval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All check-ins, train followed by eval.
    pub fn all(&self) -> impl Iterator<Item = &CheckIn> {
        self.train.iter().chain(self.eval.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub min_count: usize,
    pub holdout: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            min_count: 10,
            holdout: 30,
        }
    }
}

/// Filtered, re-densified, chronologically split dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub users: Vec<UserSequences>,
    /// `pois[p - 1]` describes dense POI `p`.
    pub pois: Vec<Poi>,
    /// Input user id for each dense user id.
    pub user_origin: Vec<UserId>,
    /// Input POI id for each dense POI id (`poi_origin[p - 1]`).
    pub poi_origin: Vec<PoiId>,
    pub options: SplitOptions,
    pub stats: DatasetStats,
}

impl SplitDataset {
    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_checkins(&self) -> usize {
        self.users.iter().map(UserSequences::len).sum()
    }

    pub fn poi(&self, id: PoiId) -> Option<&Poi> {
        if id == PADDING_POI {
            return None;
        }
        self.pois.get(id as usize - 1)
    }

    pub fn poi_coords(&self, id: PoiId) -> (f64, f64) {
        let p = &self.pois[id as usize - 1];
        (p.lat, p.lon)
    }

    /// Every check-in, train then eval per user.
    pub fn checkins(&self) -> Vec<CheckIn> {
        self.users.iter().flat_map(|u| u.all().copied()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Drops sparse users and POIs until both thresholds hold simultaneously,
/// then holds out each user's most recent `holdout` check-ins.
///
/// Users need at least `holdout + 1` check-ins after filtering so every
/// evaluation event has a non-empty history.
pub fn filter_and_split(checkins: &[CheckIn], options: SplitOptions) -> Result<SplitDataset> {
    if checkins.is_empty() {
        return Err(Error::EmptyDataset("no check-ins to split".into()));
    }
    let min_user = options.min_count.max(options.holdout + 1);
    let min_poi = options.min_count;

    let mut keep: Vec<bool> = vec![true; checkins.len()];
    let count_kept = |keep: &[bool], key: &dyn Fn(&CheckIn) -> u32| {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for (c, _) in checkins.iter().zip(keep).filter(|(_, k)| **k) {
            *counts.entry(key(c)).or_default() += 1;
        }
        counts
    };
    loop {
        let mut changed = false;
        let user_counts = count_kept(&keep, &|c| c.user);
        for (c, k) in checkins.iter().zip(keep.iter_mut()) {
            if *k && user_counts[&c.user] < min_user {
                *k = false;
                changed = true;
            }
        }
        let poi_counts = count_kept(&keep, &|c| c.poi);
        for (c, k) in checkins.iter().zip(keep.iter_mut()) {
            if *k && poi_counts[&c.poi] < min_poi {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let retained: Vec<(usize, &CheckIn)> = checkins
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all check-ins filtered away (min_count={}, holdout={})",
            options.min_count, options.holdout
        )));
    }

    // re-densify, ordered by input id
    let mut user_origin: Vec<UserId> = retained.iter().map(|(_, c)| c.user).collect();
    user_origin.sort_unstable();
    user_origin.dedup();
    let mut poi_origin: Vec<PoiId> = retained.iter().map(|(_, c)| c.poi).collect();
    poi_origin.sort_unstable();
    poi_origin.dedup();
    let user_map: HashMap<UserId, UserId> = user_origin
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i as UserId))
        .collect();
    let poi_map: HashMap<PoiId, PoiId> = poi_origin
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i as PoiId + 1))
        .collect();

    let mut per_user: Vec<Vec<(usize, CheckIn)>> = vec![Vec::new(); user_origin.len()];
    let mut coord_sums = vec![(0.0f64, 0.0f64, 0usize); poi_origin.len()];
    for &(order, c) in &retained {
        let mapped = CheckIn {
            user: user_map[&c.user],
            poi: poi_map[&c.poi],
            ..*c
        };
        let s = &mut coord_sums[mapped.poi as usize - 1];
        s.0 += c.lat;
        s.1 += c.lon;
        s.2 += 1;
        per_user[mapped.user as usize].push((order, mapped));
    }

    let users: Vec<UserSequences> = per_user
        .into_iter()
        .enumerate()
        .map(|(u, mut events)| {
            events.sort_by_key(|(order, c)| (c.timestamp, *order));
            let events: Vec<CheckIn> = events.into_iter().map(|(_, c)| c).collect();
            let cut = events.len() - options.holdout;
            UserSequences {
                id: u as UserId,
                train: events[..cut].to_vec(),
                eval: events[cut..].to_vec(),
            }
        })
        .collect();

    let pois = coord_sums
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon, n))| Poi {
            id: i as PoiId + 1,
            lat: lat / n as f64,
            lon: lon / n as f64,
        })
        .collect();

    let train: Vec<Vec<CheckIn>> = users.iter().map(|u| u.train.clone()).collect();
    let stats = compute_stats(&train, user_origin.len(), poi_origin.len())?;
    Ok(SplitDataset {
        users,
        pois,
        user_origin,
        poi_origin,
        options,
        stats,
    })
}
