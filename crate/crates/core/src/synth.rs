//! Synthetic check-in corpora with known structure.
//!
//! * `routine`: every user keeps a fixed daily routine of four time slots
//!   with one favourite POI per slot, so the next POI is fully determined by
//!   the history. Used to check the model can fit its training data.
//! * `anchored`: each user has a home and a work anchor; every check-in goes
//!   to a POI near the anchor of its time slot, rarely a repeat. Which
//!   candidates are plausible depends on their distance to the history, so
//!   the distance bias has something to find.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, DAY, HOUR};
use crate::ingest::{CheckIn, PoiId};
use crate::seed::{derived_rng, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Routine,
    Anchored,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Routine => "routine",
            SynthKind::Anchored => "anchored",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "routine" => Ok(SynthKind::Routine),
            "anchored" => Ok(SynthKind::Anchored),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?} (expected routine or anchored)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub users: usize,
    pub pois: usize,
    /// Check-ins per user.
    pub length: usize,
    /// Side of the square region the POIs are scattered over, in degrees.
    pub span_deg: f64,
    /// Anchored corpora: POIs within this distance of an anchor are eligible.
    pub radius_km: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Routine,
            users: 50,
            pois: 100,
            length: 60,
            span_deg: 0.2,
            radius_km: 1.5,
            seed: 0,
        }
    }
}

const CENTER: (f64, f64) = (40.75, -73.95);
const START: i64 = 1_600_000_000 - 1_600_000_000 % DAY;
/// Hours of the four daily slots: morning, midday, evening, night.
const SLOT_HOURS: [i64; 4] = [8, 12, 18, 22];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.pois < 2 || self.length < 2 {
            return Err(Error::Config("synthetic corpus needs users >= 1, pois >= 2, length >= 2".into()));
        }
        if self.kind == SynthKind::Routine && self.pois < SLOT_HOURS.len() {
            return Err(Error::Config("routine corpus needs at least 4 POIs".into()));
        }
        let extent_ok = self.span_deg > 0.0 && self.span_deg < 10.0 && self.radius_km > 0.0;
        if !extent_ok {
            return Err(Error::Config("span_deg must be in (0, 10) and radius_km positive".into()));
        }
        Ok(())
    }
}

/// Generates the corpus in chronological order per user, users in order.
pub fn generate(config: &SynthConfig) -> Result<Vec<CheckIn>> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, Purpose::Synth, 0);
    let half = config.span_deg / 2.0;
    let pois: Vec<(f64, f64)> = (0..config.pois)
        .map(|_| {
            (
                CENTER.0 + rng.gen_range(-half..half),
                CENTER.1 + rng.gen_range(-half..half),
            )
        })
        .collect();
    Ok(match config.kind {
        SynthKind::Routine => routine(config, &pois, &mut rng),
        SynthKind::Anchored => anchored(config, &pois, &mut rng),
    })
}

fn checkin(user: usize, poi: usize, timestamp: i64, pois: &[(f64, f64)]) -> CheckIn {
    CheckIn {
        user: user as u32,
        poi: poi as PoiId + 1,
        timestamp,
        lat: pois[poi].0,
        lon: pois[poi].1,
    }
}

/// Timestamp of the `k`-th slot of a user's schedule, with a few minutes of
/// jitter.
fn slot_time<R: Rng>(k: usize, rng: &mut R) -> i64 {
    let day = (k / SLOT_HOURS.len()) as i64;
    START + day * DAY + SLOT_HOURS[k % SLOT_HOURS.len()] * HOUR + rng.gen_range(0..1200)
}

fn routine<R: Rng>(config: &SynthConfig, pois: &[(f64, f64)], rng: &mut R) -> Vec<CheckIn> {
    // deal favourites from a shuffled deck so every POI is somebody's favourite
    let mut deck: Vec<usize> = (0..config.pois).collect();
    deck.shuffle(rng);
    let slots = SLOT_HOURS.len();
    let mut out = Vec::with_capacity(config.users * config.length);
    for u in 0..config.users {
        let favourites: Vec<usize> = (0..slots).map(|s| deck[(u * slots + s) % config.pois]).collect();
        let offset = rng.gen_range(0..slots);
        for k in 0..config.length {
            let slot = k + offset;
            out.push(checkin(u, favourites[slot % slots], slot_time(slot, rng), pois));
        }
    }
    out
}

fn anchored<R: Rng>(config: &SynthConfig, pois: &[(f64, f64)], rng: &mut R) -> Vec<CheckIn> {
    let half = config.span_deg / 2.0;
    // slot -> anchor: home in the morning and at night, work in between
    const ANCHOR_OF_SLOT: [usize; 4] = [0, 1, 1, 0];
    let mut out = Vec::with_capacity(config.users * config.length);
    for u in 0..config.users {
        let anchors: Vec<Vec<usize>> = (0..2)
            .map(|_| {
                let a = (
                    CENTER.0 + rng.gen_range(-half..half),
                    CENTER.1 + rng.gen_range(-half..half),
                );
                let dist: Vec<f64> = pois.iter().map(|p| haversine_km(a.0, a.1, p.0, p.1)).collect();
                let near: Vec<usize> = (0..pois.len()).filter(|&i| dist[i] <= config.radius_km).collect();
                if near.is_empty() {
                    let nearest = (0..pois.len()).min_by(|&i, &j| dist[i].total_cmp(&dist[j])).unwrap();
                    vec![nearest]
                } else {
                    near
                }
            })
            .collect();
        let offset = rng.gen_range(0..SLOT_HOURS.len());
        for k in 0..config.length {
            let slot = k + offset;
            let near = &anchors[ANCHOR_OF_SLOT[slot % SLOT_HOURS.len()]];
            let poi = near[rng.gen_range(0..near.len())];
            out.push(checkin(u, poi, slot_time(slot, rng), pois));
        }
    }
    out
}

/// Writes check-ins in the ingest format, `user,poi,timestamp,lat,lon`.
pub fn write_checkins<W: Write>(w: &mut W, checkins: &[CheckIn]) -> std::io::Result<()> {
    for c in checkins {
        writeln!(w, "{},{},{},{:.6},{:.6}", c.user, c.poi, c.timestamp, c.lat, c.lon)?;
    }
    Ok(())
}
