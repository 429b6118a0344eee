//! Ranking metrics: hit rate (P@K) and mean reciprocal rank (M@K).

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

/// Prefixes at least this long count as long sessions.
pub const LONG_SESSION: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    All,
    Short,
    Long,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::All, Bucket::Short, Bucket::Long];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::All => "all",
            Bucket::Short => "short",
            Bucket::Long => "long",
        }
    }

    pub fn contains(self, prefix_len: usize) -> bool {
        match self {
            Bucket::All => true,
            Bucket::Short => prefix_len < LONG_SESSION,
            Bucket::Long => prefix_len >= LONG_SESSION,
        }
    }
}

/// 1-based rank of `target`; items with an equal score and a lower index
/// rank ahead of it.
pub fn rank_of(scores: ArrayView1<f64>, target: usize) -> usize {
    let t = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count();
    1 + ahead
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: Bucket,
    pub count: usize,
    /// `P@K` per cut-off, in the order of [`RankingReport::ks`].
    pub precision: Vec<f64>,
    /// `M@K` per cut-off.
    pub mrr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub epoch: usize,
    pub ks: Vec<usize>,
    pub buckets: Vec<BucketMetrics>,
}

impl RankingReport {
    /// Builds a report from `(rank, prefix_len)` pairs.
    pub fn from_ranks(ranks: &[(usize, usize)], ks: &[usize], epoch: usize) -> Self {
        let buckets = Bucket::ALL
            .iter()
            .map(|&bucket| {
                let members: Vec<usize> = ranks
                    .iter()
                    .filter(|(_, len)| bucket.contains(*len))
                    .map(|&(r, _)| r)
                    .collect();
                let n = members.len();
                let mean = |f: &dyn Fn(usize) -> f64| {
                    if n == 0 {
                        0.0
                    } else {
                        members.iter().map(|&r| f(r)).sum::<f64>() / n as f64
                    }
                };
                BucketMetrics {
                    bucket,
                    count: n,
                    precision: ks.iter().map(|&k| mean(&|r| f64::from(u8::from(r <= k)))).collect(),
                    mrr: ks
                        .iter()
                        .map(|&k| mean(&|r| if r <= k { 1.0 / r as f64 } else { 0.0 }))
                        .collect(),
                }
            })
            .collect();
        RankingReport {
            epoch,
            ks: ks.to_vec(),
            buckets,
        }
    }

    pub fn bucket(&self, bucket: Bucket) -> &BucketMetrics {
        self.buckets
            .iter()
            .find(|b| b.bucket == bucket)
            .expect("every report carries all buckets")
    }

    /// Overall `P@k`, if `k` is one of the cut-offs.
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(self.bucket(Bucket::All).precision[i])
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(self.bucket(Bucket::All).mrr[i])
    }

    /// Checks `M@K <= P@K` and that precision does not drop as `K` grows.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mut order: Vec<usize> = (0..self.ks.len()).collect();
        order.sort_by_key(|&i| self.ks[i]);
        for b in &self.buckets {
            for i in 0..self.ks.len() {
                if b.mrr[i] > b.precision[i] || !(0.0..=1.0).contains(&b.precision[i]) {
                    return Err(format!("{}: M@{} exceeds P@{}", b.bucket.name(), self.ks[i], self.ks[i]));
                }
            }
            for w in order.windows(2) {
                if b.precision[w[0]] > b.precision[w[1]] {
                    return Err(format!(
                        "{}: P@{} exceeds P@{}",
                        b.bucket.name(),
                        self.ks[w[0]],
                        self.ks[w[1]]
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ties_favor_lower_index() {
        let s = array![0.1, 0.5, 0.5, 0.2];
        assert_eq!(rank_of(s.view(), 1), 1);
        assert_eq!(rank_of(s.view(), 2), 2);
        assert_eq!(rank_of(s.view(), 0), 4);
    }

    #[test]
    fn perfect_ranker() {
        let r = RankingReport::from_ranks(&[(1, 2), (1, 7)], &[10, 20], 0);
        for b in &r.buckets {
            assert_eq!(b.precision, vec![1.0, 1.0]);
            assert_eq!(b.mrr, vec![1.0, 1.0]);
        }
        r.check().unwrap();
    }

    #[test]
    fn rank_three_everywhere() {
        let r = RankingReport::from_ranks(&[(3, 1); 4], &[10], 0);
        assert_eq!(r.precision_at(10), Some(1.0));
        assert_eq!(r.mrr_at(10), Some(1.0 / 3.0));
        assert_eq!(r.bucket(Bucket::Long).count, 0);
    }

    #[test]
    fn buckets_split_at_five() {
        let r = RankingReport::from_ranks(&[(1, 4), (30, 5)], &[20], 0);
        assert_eq!(r.bucket(Bucket::Short).precision, vec![1.0]);
        assert_eq!(r.bucket(Bucket::Long).precision, vec![0.0]);
        assert_eq!(r.bucket(Bucket::All).precision, vec![0.5]);
    }
}
