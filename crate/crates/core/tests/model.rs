use std::collections::BTreeMap;

use ccrank_core::geo::haversine_km;
use ccrank_core::model::{read_checkpoint, write_checkpoint};
use ccrank_core::numeric::grad_check;
use ccrank_core::{CandidateSlate, CheckIn, DatasetStats, Error, Model, ModelConfig, PaddedHistory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stats() -> DatasetStats {
    DatasetStats {
        mu_lat: 40.7,
        sigma_lat: 0.05,
        mu_lon: -74.0,
        sigma_lon: 0.05,
        popularity: BTreeMap::new(),
        num_pois: 20,
        num_users: 1,
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_pois: 20,
        dim: 8,
        heads: 2,
        layers: 1,
        history_len: 6,
        dropout: 0.0,
        ..Default::default()
    }
}

fn events(n: usize, seed: u64) -> Vec<CheckIn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 1_600_000_000i64;
    (0..n)
        .map(|_| {
            t += rng.gen_range(600..400_000);
            CheckIn {
                user: 0,
                poi: rng.gen_range(1..=20),
                timestamp: t,
                lat: 40.7 + rng.gen_range(-0.1..0.1),
                lon: -74.0 + rng.gen_range(-0.1..0.1),
            }
        })
        .collect()
}

fn slate(ids: &[u32], seed: u64) -> CandidateSlate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = ids
        .iter()
        .map(|_| (40.7 + rng.gen_range(-0.2..0.2), -74.0 + rng.gen_range(-0.2..0.2)))
        .collect();
    CandidateSlate::new(ids.to_vec(), coords).unwrap()
}

fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let t = model.params.get_mut(id);
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        if name == "history_poi_embedding" {
            t.row_mut(0).fill(0.0);
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (seed, hist_len) in [(1u64, 4usize), (2, 6), (3, 2)] {
        let mut model = Model::new(tiny_config(), seed).unwrap();
        randomize(&mut model, seed + 100);
        let h = PaddedHistory::new(&events(hist_len, seed), 6, &stats()).unwrap();
        let c = slate(&[3, 7, 11, 3], seed);
        let weights = [1.3, -0.7, 0.4, 0.9];
        let report = grad_check(&model.params, 1e-5, |p, grads| {
            let cache = model.forward_with(p, &h, &c, None)?;
            let loss = cache
                .scores
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s + 0.25 * s * s)
                .sum::<f64>();
            if let Some(g) = grads {
                let ds: Vec<f64> = cache.scores.iter().zip(weights).map(|(s, w)| w + 0.5 * s).collect();
                model.backward_with(p, &cache, &ds, g);
            }
            Ok(loss)
        })
        .unwrap();
        assert_eq!(report.entries.len(), model.params.len());
        assert!(
            report.failing(1e-4).is_empty(),
            "seed {seed}: {:?}",
            report.entries
        );
    }
}

#[test]
fn padded_rows_are_zero_and_single_real_row_nonzero() {
    let model = Model::new(tiny_config(), 4).unwrap();
    let h = PaddedHistory::new(&events(1, 4), 6, &stats()).unwrap();
    let cache = model.forward_with(&model.params, &h, &slate(&[1, 2], 0), None).unwrap();
    let x = cache.embedded_history();
    for r in 0..5 {
        assert!(x.row(r).iter().all(|v| *v == 0.0));
    }
    assert!(x.row(5).iter().any(|v| *v != 0.0));
    let x = cache.history_repr();
    for r in 0..5 {
        assert!(x.row(r).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn history_attention_is_causal() {
    let model = Model::new(tiny_config(), 5).unwrap();
    let ev = events(6, 5);
    let h = PaddedHistory::new(&ev, 6, &stats()).unwrap();
    let mut changed = ev.clone();
    changed[4].poi = if ev[4].poi == 9 { 10 } else { 9 };
    let h2 = PaddedHistory::new(&changed, 6, &stats()).unwrap();
    let c = slate(&[1], 0);
    let a = model.forward_with(&model.params, &h, &c, None).unwrap();
    let b = model.forward_with(&model.params, &h2, &c, None).unwrap();
    for r in 0..4 {
        assert_eq!(a.history_repr().row(r), b.history_repr().row(r));
    }
    assert_ne!(a.history_repr().row(4), b.history_repr().row(4));
}

#[test]
fn identical_events_differ_only_by_positional_encoding_before_norm() {
    // two identical check-ins produce different embedded rows
    let model = Model::new(ModelConfig { use_history_attn: false, ..tiny_config() }, 6).unwrap();
    let e = events(1, 6)[0];
    let h = PaddedHistory::new(&[e, e], 6, &stats()).unwrap();
    let cache = model.forward_with(&model.params, &h, &slate(&[1], 0), None).unwrap();
    assert_ne!(cache.embedded_history().row(4), cache.embedded_history().row(5));
}

#[test]
fn bias_ablation_and_padding_columns() {
    let mut cfg = tiny_config();
    cfg.use_temporal_bias = false;
    cfg.use_spatial_bias = false;
    let mut model = Model::new(cfg, 7).unwrap();
    randomize(&mut model, 8);
    let h = PaddedHistory::new(&events(3, 7), 6, &stats()).unwrap();
    let b = model.build_bias(&h, &slate(&[1, 2], 1));
    for j in 0..2 {
        assert_eq!(&b.row(j)[..3], &[-1e4; 3]);
        assert_eq!(&b.row(j)[3..], &[0.0; 3]);
    }
}

#[test]
fn bias_in_single_buckets_is_sum_of_two_lookups() {
    let mut model = Model::new(tiny_config(), 9).unwrap();
    randomize(&mut model, 10);
    // three check-ins within an hour of the last, all within 100 m of the candidate
    let base = CheckIn { user: 0, poi: 1, timestamp: 1_700_000_000, lat: 40.7, lon: -74.0 };
    let ev: Vec<CheckIn> = (0..3).map(|k| CheckIn { timestamp: base.timestamp + 60 * k, ..base }).collect();
    let h = PaddedHistory::new(&ev, 6, &stats()).unwrap();
    let c = CandidateSlate::new(vec![2, 5], vec![(40.7001, -74.0), (40.7, -74.0001)]).unwrap();
    let b = model.build_bias(&h, &c);
    let p = &model.params;
    let lookup = |table: &str, proj: &str, bucket: usize| -> f64 {
        let t = p.get(p.id(table).unwrap());
        let w = p.get(p.id(proj).unwrap());
        t.row(bucket).iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let expected = lookup("time_bias.table", "time_bias.proj", 0) + lookup("dist_bias.table", "dist_bias.proj", 0);
    for j in 0..2 {
        for i in 3..6 {
            assert!((b.row(j)[i] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn colocated_candidates_share_bias_rows() {
    let mut model = Model::new(tiny_config(), 11).unwrap();
    randomize(&mut model, 12);
    let h = PaddedHistory::new(&events(5, 11), 6, &stats()).unwrap();
    let c = CandidateSlate::new(vec![2, 9], vec![(40.71, -74.02); 2]).unwrap();
    let b = model.build_bias(&h, &c);
    assert_eq!(b.row(0), b.row(1));
}

#[test]
fn single_real_key_gets_all_attention() {
    let mut model = Model::new(ModelConfig { layers: 2, ..tiny_config() }, 13).unwrap();
    randomize(&mut model, 14);
    let h = PaddedHistory::new(&events(1, 13), 6, &stats()).unwrap();
    let dump = model.attention_dump(&h, &slate(&[1, 2, 3], 2)).unwrap();
    for layer in &dump.weights {
        for w in layer {
            for j in 0..3 {
                assert_eq!(&w.row(j)[..5], &[0.0; 5]);
                assert!((w.row(j)[5] - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_rows_normalized_and_padding_ignored() {
    let mut model = Model::new(ModelConfig { layers: 2, ..tiny_config() }, 15).unwrap();
    randomize(&mut model, 16);
    let h = PaddedHistory::new(&events(4, 15), 6, &stats()).unwrap();
    let dump = model.attention_dump(&h, &slate(&[4, 5, 6, 7], 3)).unwrap();
    for layer in &dump.weights {
        for w in layer {
            for j in 0..4 {
                let row = w.row(j);
                assert!(row.iter().all(|v| *v >= 0.0));
                assert!(row[..2].iter().sum::<f64>() < 1e-6);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
    let mut out = Vec::new();
    dump.write_tsv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4 * 6);
}

#[test]
fn spatial_bias_toggle_changes_attention() {
    let mut model = Model::new(tiny_config(), 17).unwrap();
    randomize(&mut model, 18);
    let h = PaddedHistory::new(&events(6, 17), 6, &stats()).unwrap();
    let c = CandidateSlate::new(vec![1, 2], vec![(40.7, -74.0), (41.5, -73.0)]).unwrap();
    let on = model.attention_dump(&h, &c).unwrap();
    model.config.use_spatial_bias = false;
    let off = model.attention_dump(&h, &c).unwrap();
    assert_ne!(on.get(0, 0), off.get(0, 0));
}

#[test]
fn scores_are_permutation_equivariant_and_duplicates_agree() {
    let mut model = Model::new(ModelConfig { layers: 2, ..tiny_config() }, 19).unwrap();
    randomize(&mut model, 20);
    let h = PaddedHistory::new(&events(6, 19), 6, &stats()).unwrap();
    let c = slate(&[5, 8, 13, 2, 17], 4);
    let s = model.score(&h, &c).unwrap();
    let perm = [3, 0, 4, 2, 1];
    let sp = model.score(&h, &c.permuted(&perm)).unwrap();
    for (j, &src) in perm.iter().enumerate() {
        assert_eq!(sp[j], s[src]);
    }
    let dup = CandidateSlate::new(vec![5, 5], vec![c.coords[0]; 2]).unwrap();
    let sd = model.score(&h, &dup).unwrap();
    assert_eq!(sd[0], sd[1]);
}

#[test]
fn prepending_padding_leaves_scores_unchanged() {
    let mut model = Model::new(ModelConfig { layers: 2, ..tiny_config() }, 21).unwrap();
    randomize(&mut model, 22);
    let h = PaddedHistory::new(&events(4, 21), 6, &stats()).unwrap();
    let c = slate(&[1, 4, 9], 5);
    let s = model.score(&h, &c).unwrap();
    for extra in [1, 5, 30] {
        let s2 = model.score(&h.with_extra_padding(extra), &c).unwrap();
        for (a, b) in s.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-9, "extra {extra}: {a} vs {b}");
        }
    }
}

#[test]
fn candidate_location_changes_ranking_only_with_spatial_bias() {
    // two candidates with identical embeddings at different places
    let mut model = Model::new(tiny_config(), 23).unwrap();
    randomize(&mut model, 24);
    let row = model.params.get(model.param_id("candidate_poi_embedding").unwrap()).row(3).to_vec();
    let cand = model.param_id("candidate_poi_embedding").unwrap();
    model.params.get_mut(cand).row_mut(4).copy_from_slice(&row);
    let dist = model.param_id("dist_bias.table").unwrap();
    for (b, v) in model.params.get_mut(dist).data_mut().iter_mut().enumerate() {
        *v = if b < 8 { 2.0 } else { -0.5 };
    }
    let near = (40.7, -74.0);
    let far = (40.0, -73.0);
    assert!(haversine_km(near.0, near.1, far.0, far.1) > 10.0);
    // first half of the history sits at `far`, the recent half at `near`
    let ev: Vec<CheckIn> = (0..6)
        .map(|k| {
            let (lat, lon) = if k < 3 { far } else { near };
            CheckIn { user: 0, poi: 1 + k as u32, timestamp: 1_700_000_000 + 3600 * k, lat, lon }
        })
        .collect();
    let h = PaddedHistory::new(&ev, 6, &stats()).unwrap();
    let c = CandidateSlate::new(vec![3, 4], vec![near, far]).unwrap();
    let s = model.score(&h, &c).unwrap();
    assert!((s[0] - s[1]).abs() > 1e-6, "{s:?}");
    model.config.use_spatial_bias = false;
    let s = model.score(&h, &c).unwrap();
    assert_eq!(s[0], s[1]);
}

#[test]
fn out_of_range_ids_are_contract_violations() {
    let model = Model::new(tiny_config(), 25).unwrap();
    let h = PaddedHistory::new(&events(3, 25), 6, &stats()).unwrap();
    let c = CandidateSlate::new(vec![21], vec![(40.7, -74.0)]).unwrap();
    assert!(matches!(model.score(&h, &c), Err(Error::Contract(_))));
    let mut bad = h.clone();
    bad.poi_ids[5] = 99;
    assert!(matches!(model.score(&bad, &slate(&[1], 0)), Err(Error::Contract(_))));
}

#[test]
fn checkpoint_round_trip_reproduces_scores() {
    let mut model = Model::new(tiny_config(), 26).unwrap();
    randomize(&mut model, 27);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model).unwrap();
    let back = read_checkpoint(&mut &buf[..]).unwrap();
    let h = PaddedHistory::new(&events(5, 26), 6, &stats()).unwrap();
    let c = slate(&[1, 2, 3], 6);
    assert_eq!(model.score(&h, &c).unwrap(), back.score(&h, &c).unwrap());
}

#[test]
fn raising_one_bias_entry_raises_that_attention_weight() {
    let mut model = Model::new(tiny_config(), 4).unwrap();
    randomize(&mut model, 4);
    // the oldest check-in is the only one more than 30 days before the last
    let mut ev = events(4, 4);
    let base = ev[1].timestamp;
    ev[0].timestamp = base - 40 * 86_400;
    for (i, e) in ev.iter_mut().enumerate().skip(1) {
        e.timestamp = base + i as i64 * 60;
    }
    let h = PaddedHistory::new(&ev, 6, &stats()).unwrap();
    let s = slate(&[2, 9, 14], 4);
    let before = model.attention_dump(&h, &s).unwrap();

    let proj_id = model.param_id("time_bias.proj").unwrap();
    let proj = model.params.get(proj_id).data().to_vec();
    let norm2: f64 = proj.iter().map(|p| p * p).sum();
    let table_id = model.param_id("time_bias.table").unwrap();
    let last_bucket = model.params.get(table_id).shape()[0] - 1;
    let row = model.params.get_mut(table_id).row_mut(last_bucket);
    for (r, p) in row.iter_mut().zip(&proj) {
        *r += 10.0 * p / norm2;
    }
    let after = model.attention_dump(&h, &s).unwrap();

    let oldest = 2; // two padded slots in front
    for head in 0..2 {
        for j in 0..s.len() {
            let (b, a) = (before.get(0, head).row(j)[oldest], after.get(0, head).row(j)[oldest]);
            assert!(a > b, "head {head} candidate {j}: {b} -> {a}");
        }
    }
}
