//! Ranking metrics for a single relevant item per instance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// 1-based rank of the positive. Ties rank the positive below every
/// equal-scored negative, so a constant scorer never earns a hit.
pub fn rank_of_positive(scores: &[f64], positive: usize) -> usize {
    let s = scores[positive];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| j != positive && v.partial_cmp(&s) != Some(Ordering::Less))
        .count()
}

/// `(hit, ndcg)` at cutoff `k` for a 1-based `rank`.
pub fn metrics_at_k(rank: usize, k: usize) -> (f64, f64) {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

/// Mean reciprocal rank; zero for an empty list.
pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// HR@5/10, NDCG@5/10 and MRR averaged over a set of ranks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub instances: usize,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let mut m = Metrics {
            instances: ranks.len(),
            mrr: mrr(ranks),
            ..Default::default()
        };
        for &r in ranks {
            let (h5, n5) = metrics_at_k(r, 5);
            let (h10, n10) = metrics_at_k(r, 10);
            m.hr5 += h5;
            m.ndcg5 += n5;
            m.hr10 += h10;
            m.ndcg10 += n10;
        }
        m.hr5 /= n;
        m.hr10 /= n;
        m.ndcg5 /= n;
        m.ndcg10 /= n;
        m
    }

    /// Fraction of ranks within `k`.
    pub fn hit_rate(ranks: &[usize], k: usize) -> f64 {
        if ranks.is_empty() {
            return 0.0;
        }
        ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(metrics_at_k(1, 5), (1.0, 1.0));
        assert_eq!(metrics_at_k(3, 10), (1.0, 0.5));
        assert_eq!(metrics_at_k(11, 10), (0.0, 0.0));
        assert_eq!(mrr(&[1, 1, 1]), 1.0);
        assert_eq!(mrr(&[4]), 0.25);
        assert!((mrr(&[1, 2, 4]) - 1.75 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_rank_positive_last() {
        assert_eq!(rank_of_positive(&[1.0; 100], 0), 100);
        assert_eq!(rank_of_positive(&[2.0, 1.0, 2.0, 3.0], 0), 3);
        assert_eq!(rank_of_positive(&[0.5, 0.1, 0.2], 0), 1);
        assert_eq!(rank_of_positive(&[0.1, 0.5, 0.2], 2), 2);
    }

    #[test]
    fn cutoffs_ordered() {
        let m = Metrics::from_ranks(&[1, 3, 6, 12, 50]);
        assert!(m.hr5 <= m.hr10 && m.ndcg5 <= m.ndcg10);
        assert!(m.ndcg10 <= m.hr10 && m.mrr > 0.0);
        assert_eq!(m.hr5, 0.4);
        assert_eq!(m.hr10, 0.6);
    }
}
