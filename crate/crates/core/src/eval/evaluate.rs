//! Ranking evaluation over held-out check-ins.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CheckIn, PoiId, SplitDataset, UserId};
use crate::model::{CandidateSlate, Model, PaddedHistory};
use crate::seed::{derived_rng, Purpose};

use super::metrics::{rank_of_positive, Metrics};
use super::pool::{build_eval_pool, EvalPool, PoolConfig, PoolMode};

/// Anything that scores a candidate slate against a history.
pub trait Scorer: Sync {
    /// Largest POI id the scorer knows.
    fn num_pois(&self) -> usize;
    fn history_len(&self) -> usize;
    fn score(&self, history: &PaddedHistory, slate: &CandidateSlate) -> Result<Vec<f64>>;
}

impl Scorer for Model {
    fn num_pois(&self) -> usize {
        self.config.num_pois
    }

    fn history_len(&self) -> usize {
        self.config.history_len
    }

    fn score(&self, history: &PaddedHistory, slate: &CandidateSlate) -> Result<Vec<f64>> {
        Model::score(self, history, slate)
    }
}

/// One ranking decision: predict `positive` from the preceding check-ins.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub user: UserId,
    /// Index of the positive within the user's held-out (or training) sequence.
    pub event: usize,
    pub positive: PoiId,
    /// Chronological history, already cut to the most recent window.
    pub history: Vec<CheckIn>,
}

fn window(prefix: &[CheckIn], tail: &[CheckIn], len: usize) -> Vec<CheckIn> {
    let from_tail = tail.len().min(len);
    let from_prefix = (len - from_tail).min(prefix.len());
    let mut out = Vec::with_capacity(from_prefix + from_tail);
    out.extend_from_slice(&prefix[prefix.len() - from_prefix..]);
    out.extend_from_slice(&tail[tail.len() - from_tail..]);
    out
}

/// Every held-out check-in, with all earlier check-ins (training plus
/// earlier held-out ones) as history.
pub fn eval_instances(data: &SplitDataset, history_len: usize) -> Vec<EvalInstance> {
    let mut out = Vec::new();
    for u in &data.users {
        for (j, c) in u.eval.iter().enumerate() {
            if u.train.is_empty() && j == 0 {
                continue;
            }
            out.push(EvalInstance {
                user: u.id,
                event: j,
                positive: c.poi,
                history: window(&u.train, &u.eval[..j], history_len),
            });
        }
    }
    out
}

/// The last training check-in of each user, predicted from the rest.
pub fn validation_instances(data: &SplitDataset, history_len: usize) -> Vec<EvalInstance> {
    data.users
        .iter()
        .filter(|u| u.train.len() >= 2)
        .map(|u| {
            let n = u.train.len();
            EvalInstance {
                user: u.id,
                event: n - 1,
                positive: u.train[n - 1].poi,
                history: window(&u.train[..n - 1], &[], history_len),
            }
        })
        .collect()
}

/// Random source for one instance's pool; depends only on the seed and the
/// instance's identity, never on scheduling.
fn instance_rng(seed: u64, user: UserId, event: usize) -> ChaCha8Rng {
    derived_rng(seed, Purpose::EvalPool, ((user as u64) << 32) | event as u64)
}

/// The candidate pool an instance is ranked against; `known` is the number
/// of POIs both the scorer and the dataset cover.
pub fn instance_pool(inst: &EvalInstance, known: usize, pool: &PoolConfig) -> Result<EvalPool> {
    let mut rng = instance_rng(pool.seed, inst.user, inst.event);
    build_eval_pool(inst.positive, known, pool.mode, pool.size, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRank {
    pub user: UserId,
    pub event: usize,
    pub poi: PoiId,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    /// Inclusive range of the stratifying count covered by this bin.
    pub min: u64,
    pub max: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Strata {
    /// Quartiles of users' training check-in counts.
    pub user_activity: Vec<Stratum>,
    /// Quartiles of the positive POI's training visit count.
    pub poi_frequency: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub pool_mode: PoolMode,
    /// Candidates per instance.
    pub pool_size: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Instances dropped because they reference POIs the scorer lacks.
    pub skipped: usize,
    pub strata: Strata,
    pub ranks: Vec<InstanceRank>,
}

impl RankReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Tab-separated `user event poi rank` lines.
    pub fn ranks_tsv(&self) -> String {
        let mut s = String::from("user\tevent\tpoi\trank\n");
        for r in &self.ranks {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.user, r.event, r.poi, r.rank));
        }
        s
    }
}

/// Ranks of the positive for each instance, in input order; `None` marks a
/// skipped instance.
pub fn rank_instances<S: Scorer + ?Sized>(
    scorer: &S,
    data: &SplitDataset,
    instances: &[EvalInstance],
    pool: &PoolConfig,
) -> Result<Vec<Option<usize>>> {
    let known = scorer.num_pois().min(data.num_pois());
    if pool.mode == PoolMode::Sampled && pool.size > known {
        return Err(Error::Pool(format!("pool size {} exceeds the {known} available POIs", pool.size)));
    }
    let stats = &data.stats;
    let len = scorer.history_len();
    instances
        .par_iter()
        .map(|inst| {
            let in_range = |p: PoiId| p >= 1 && p as usize <= known;
            if !in_range(inst.positive) || !inst.history.iter().all(|c| in_range(c.poi)) {
                return Ok(None);
            }
            let p = instance_pool(inst, known, pool)?;
            let history = PaddedHistory::new(&inst.history, len, stats)?;
            let slate = CandidateSlate::from_dataset(p.poi_ids, data)?;
            let scores = scorer.score(&history, &slate)?;
            Ok(Some(rank_of_positive(&scores, p.positive)))
        })
        .collect()
}

fn quartile_edges(mut values: Vec<u64>) -> [u64; 3] {
    values.sort_unstable();
    let q = |p: f64| values[((values.len() - 1) as f64 * p).floor() as usize];
    [q(0.25), q(0.5), q(0.75)]
}

fn stratify(population: Vec<u64>, keyed: &[(u64, usize)]) -> Vec<Stratum> {
    if population.is_empty() {
        return Vec::new();
    }
    let lo = *population.iter().min().unwrap();
    let hi = *population.iter().max().unwrap();
    let edges = quartile_edges(population);
    let bounds = [lo, edges[0], edges[1], edges[2], hi];
    (0..4)
        .map(|b| {
            let ranks: Vec<usize> = keyed
                .iter()
                .filter(|(v, _)| edges.iter().filter(|&&e| *v > e).count() == b)
                .map(|(_, r)| *r)
                .collect();
            Stratum {
                label: format!("Q{}", b + 1),
                min: if b == 0 { bounds[0] } else { bounds[b] + 1 },
                max: bounds[b + 1],
                metrics: Metrics::from_ranks(&ranks),
            }
        })
        .collect()
}

/// Scores every held-out check-in against a pool and aggregates the ranks.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, data: &SplitDataset, pool: &PoolConfig) -> Result<RankReport> {
    let instances = eval_instances(data, scorer.history_len());
    if instances.is_empty() {
        return Err(Error::EmptyDataset("no held-out check-ins to evaluate".into()));
    }
    let ranks = rank_instances(scorer, data, &instances, pool)?;

    let mut kept = Vec::with_capacity(ranks.len());
    for (inst, r) in instances.iter().zip(&ranks) {
        if let Some(rank) = *r {
            kept.push(InstanceRank {
                user: inst.user,
                event: inst.event,
                poi: inst.positive,
                rank,
            });
        }
    }
    let skipped = ranks.len() - kept.len();
    let just_ranks: Vec<usize> = kept.iter().map(|r| r.rank).collect();

    let train_len = |u: UserId| data.users[u as usize].train.len() as u64;
    let user_keyed: Vec<(u64, usize)> = kept.iter().map(|r| (train_len(r.user), r.rank)).collect();
    let poi_keyed: Vec<(u64, usize)> = kept.iter().map(|r| (data.stats.popularity_of(r.poi), r.rank)).collect();
    let strata = Strata {
        user_activity: stratify(data.users.iter().map(|u| u.train.len() as u64).collect(), &user_keyed),
        poi_frequency: stratify(
            (1..=data.num_pois() as PoiId).map(|p| data.stats.popularity_of(p)).collect(),
            &poi_keyed,
        ),
    };

    let pool_size = match pool.mode {
        PoolMode::Sampled => pool.size,
        PoolMode::Full => scorer.num_pois().min(data.num_pois()),
    };
    Ok(RankReport {
        pool_mode: pool.mode,
        pool_size,
        seed: pool.seed,
        metrics: Metrics::from_ranks(&just_ranks),
        skipped,
        strata,
        ranks: kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub hr10: f64,
}

/// HR@10 at each sampled pool size, all sharing `seed`.
pub fn pool_size_sweep<S: Scorer + ?Sized>(
    scorer: &S,
    data: &SplitDataset,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let instances = eval_instances(data, scorer.history_len());
    sizes
        .iter()
        .map(|&size| {
            let pool = PoolConfig {
                mode: PoolMode::Sampled,
                size,
                seed,
            };
            let ranks: Vec<usize> = rank_instances(scorer, data, &instances, &pool)?.into_iter().flatten().collect();
            Ok(SweepPoint {
                size,
                hr10: Metrics::hit_rate(&ranks, 10),
            })
        })
        .collect()
}
