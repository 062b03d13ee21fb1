//! Self-checks runnable on any build: finite-difference gradient checks of
//! the full model, bucketing and distance oracles, and masking invariants.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geo::{self, DIST_BOUNDARIES, EARTH_RADIUS_KM, TIME_BOUNDARIES};
use crate::ingest::{CheckIn, DatasetStats};
use crate::model::{CandidateSlate, Model, ModelConfig, PaddedHistory};
use crate::numeric::grad_check;
use crate::seed::{derived_rng, Purpose};
use crate::train::ce_loss_with_grad;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Test hook: perturb the analytic gradient of this parameter so the
    /// gradient check has something to catch.
    pub corrupt_gradient: Option<String>,
}

/// The configuration the gradient check runs at.
pub fn tiny_config(num_pois: usize) -> ModelConfig {
    ModelConfig {
        num_pois,
        dim: 8,
        heads: 2,
        layers: 1,
        history_len: 6,
        dropout: 0.0,
        ..Default::default()
    }
}

/// Random fixture: a `len`-step history (chronological) and `c` candidates
/// around a city centre.
pub fn fixture<R: Rng>(rng: &mut R, num_pois: usize, len: usize, c: usize) -> (Vec<CheckIn>, CandidateSlate, DatasetStats) {
    let mut t = 1_600_000_000i64;
    let events = (0..len)
        .map(|_| {
            t += rng.gen_range(60..500_000);
            CheckIn {
                user: 0,
                poi: rng.gen_range(1..=num_pois as u32),
                timestamp: t,
                lat: 40.7 + rng.gen_range(-0.1..0.1),
                lon: -74.0 + rng.gen_range(-0.1..0.1),
            }
        })
        .collect();
    let ids = (0..c).map(|_| rng.gen_range(1..=num_pois as u32)).collect();
    let coords = (0..c)
        .map(|_| (40.7 + rng.gen_range(-0.3..0.3), -74.0 + rng.gen_range(-0.3..0.3)))
        .collect();
    let stats = DatasetStats {
        mu_lat: 40.7,
        sigma_lat: 0.06,
        mu_lon: -74.0,
        sigma_lon: 0.06,
        popularity: BTreeMap::new(),
        num_pois,
        num_users: 1,
    };
    (events, CandidateSlate::new(ids, coords).expect("fixture slate is valid"), stats)
}

/// Shifts every parameter by a random amount so that zero-initialized
/// tables (the bias buckets) carry gradient signal too.
pub fn jitter_params<R: Rng>(model: &mut Model, rng: &mut R, scale: f64) {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let padding_row = model.params.name(id) == "history_poi_embedding";
        let t = model.params.get_mut(id);
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
        if padding_row {
            t.row_mut(0).fill(0.0);
        }
    }
}

fn gradient_checks(report: &mut VerifyReport, opts: &VerifyOptions) -> Result<()> {
    let mut rng = derived_rng(opts.seed, Purpose::Verify, 0);
    let num_pois = 12;
    let mut model = Model::new(tiny_config(num_pois), opts.seed)?;
    jitter_params(&mut model, &mut rng, 0.3);
    // four real check-ins, two padded slots, four candidates
    let (events, slate, stats) = fixture(&mut rng, num_pois, 4, 4);
    let history = PaddedHistory::new(&events, 6, &stats)?;
    let corrupt = opts.corrupt_gradient.as_deref().and_then(|n| model.param_id(n));
    if let (Some(name), None) = (&opts.corrupt_gradient, corrupt) {
        report.push("gradient hook", false, format!("no parameter named {name}"));
    }

    let grads_report = grad_check(&model.params, GRAD_EPS, |p, grads| {
        let cache = model.forward_with(p, &history, &slate, None)?;
        let (loss, ds) = ce_loss_with_grad(&cache.scores, 0.1, 1.0)?;
        if let Some(g) = grads {
            model.backward_with(p, &cache, &ds, g);
            if let Some(id) = corrupt {
                g.get_mut(id).data_mut().iter_mut().for_each(|v| *v = *v * 1.1 + 1e-3);
            }
        }
        Ok(loss)
    })?;
    for (name, err) in &grads_report.entries {
        report.push(
            format!("gradient {name}"),
            *err < GRAD_TOLERANCE,
            format!("max relative error {err:.2e}"),
        );
    }
    Ok(())
}

/// Great-circle distance through 3-D unit vectors, as an oracle for
/// [`geo::haversine_km`].
pub fn vector_distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    EARTH_RADIUS_KM * sin.atan2(cos)
}

pub fn linear_time_bucket(delta: i64) -> usize {
    let mut b = 0;
    for &edge in &TIME_BOUNDARIES {
        if delta >= edge {
            b += 1;
        }
    }
    b
}

pub fn linear_dist_bucket(km: f64) -> usize {
    let mut b = 0;
    for &edge in &DIST_BOUNDARIES {
        if km >= edge {
            b += 1;
        }
    }
    b
}

fn oracle_checks(report: &mut VerifyReport, opts: &VerifyOptions, samples: usize) {
    let mut rng = derived_rng(opts.seed, Purpose::Verify, 1);
    let mut bad_time = 0;
    let mut bad_dist = 0;
    for i in 0..samples {
        // mix exact boundaries in with random draws
        let dt = if i % 10 == 0 {
            TIME_BOUNDARIES[i / 10 % TIME_BOUNDARIES.len()] + rng.gen_range(-1..=1)
        } else {
            rng.gen_range(0..90 * geo::DAY)
        };
        let km = if i % 10 == 0 {
            DIST_BOUNDARIES[i / 10 % DIST_BOUNDARIES.len()]
        } else {
            rng.gen_range(0.0..50.0)
        };
        bad_time += usize::from(geo::bucketize_time(dt) != linear_time_bucket(dt));
        bad_dist += usize::from(geo::bucketize_dist(km) != linear_dist_bucket(km));
    }
    report.push("time buckets vs linear scan", bad_time == 0, format!("{bad_time} mismatches in {samples}"));
    report.push("distance buckets vs linear scan", bad_dist == 0, format!("{bad_dist} mismatches in {samples}"));

    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (a, b) = (rng.gen_range(-89.0..89.0), rng.gen_range(-180.0..180.0));
        let (c, d) = (rng.gen_range(-89.0..89.0), rng.gen_range(-180.0..180.0));
        let h = geo::haversine_km(a, b, c, d);
        let o = vector_distance_km(a, b, c, d);
        if o > 1e-6 {
            worst = worst.max((h - o).abs() / o);
        }
    }
    report.push("haversine vs vector oracle", worst < 1e-9, format!("max relative error {worst:.2e}"));
    let degree = geo::haversine_km(0.0, 0.0, 0.0, 1.0);
    let quarter = geo::haversine_km(0.0, 0.0, 90.0, 0.0);
    report.push(
        "haversine reference distances",
        (degree / 111.195 - 1.0).abs() < 1e-4 && (quarter / 10007.54 - 1.0).abs() < 1e-4,
        format!("1 degree = {degree:.3} km, pole = {quarter:.2} km"),
    );
}

fn masking_checks(report: &mut VerifyReport, opts: &VerifyOptions) -> Result<()> {
    let mut rng = derived_rng(opts.seed, Purpose::Verify, 2);
    let num_pois = 30;
    let cfg = ModelConfig {
        num_pois,
        dim: 16,
        heads: 4,
        layers: 2,
        history_len: 12,
        dropout: 0.0,
        ..Default::default()
    };
    let mut model = Model::new(cfg, opts.seed)?;
    jitter_params(&mut model, &mut rng, 0.5);
    let (events, slate, stats) = fixture(&mut rng, num_pois, 5, 8);
    let history = PaddedHistory::new(&events, 12, &stats)?;
    let pad = history.len() - history.real_len();

    let dump = model.attention_dump(&history, &slate)?;
    let mut max_mass: f64 = 0.0;
    let mut max_norm_err: f64 = 0.0;
    for layer in &dump.weights {
        for w in layer {
            for j in 0..slate.len() {
                let row = w.row(j);
                max_mass = max_mass.max(row[..pad].iter().sum());
                max_norm_err = max_norm_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    report.push("attention mass on padding", max_mass < 1e-6, format!("max {max_mass:.2e}"));
    report.push("attention rows sum to one", max_norm_err < 1e-9, format!("max deviation {max_norm_err:.2e}"));

    let base = model.score(&history, &slate)?;
    let mut worst: f64 = 0.0;
    for extra in [1, 7, 40] {
        let s = model.score(&history.with_extra_padding(extra), &slate)?;
        worst = base.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    report.push("padding invariance", worst < 1e-9, format!("max score change {worst:.2e}"));

    // perturbing the newest check-in must not move older positions
    let mut changed = events.clone();
    let last = changed.len() - 1;
    changed[last].poi = changed[last].poi % num_pois as u32 + 1;
    let h2 = PaddedHistory::new(&changed, 12, &stats)?;
    let a = model.forward_with(&model.params, &history, &slate, None)?;
    let b = model.forward_with(&model.params, &h2, &slate, None)?;
    let n = history.len();
    let causal = (0..n - 1).all(|r| a.history_repr().row(r) == b.history_repr().row(r));
    report.push("history attention is causal", causal, "earlier rows unchanged by a later edit");
    Ok(())
}

/// Runs every check; errors are reserved for checks that could not run.
pub fn run_checks(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    gradient_checks(&mut report, opts)?;
    oracle_checks(&mut report, opts, 20_000);
    masking_checks(&mut report, opts)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_on_two_seeds() {
        for seed in [0, 9] {
            let r = run_checks(&VerifyOptions { seed, corrupt_gradient: None }).unwrap();
            assert!(r.checks.len() > 40);
            let failed: Vec<_> = r.failures().collect();
            assert!(failed.is_empty(), "{failed:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let opts = VerifyOptions {
            seed: 1,
            corrupt_gradient: Some("block0.ffn2.weight".into()),
        };
        let r = run_checks(&opts).unwrap();
        let failed: Vec<_> = r.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["gradient block0.ffn2.weight"]);
    }

    #[test]
    fn oracles_agree_on_reference_points() {
        assert!((vector_distance_km(0.0, 0.0, 0.0, 1.0) - 111.195).abs() < 1e-3);
        assert_eq!(linear_time_bucket(3600), 1);
        assert_eq!(linear_dist_bucket(0.0999), 0);
    }
}
