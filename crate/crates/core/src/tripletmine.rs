//! Positive/negative candidate mining and triplet sampling.
//!
//! Positives for an anchor are either its n nearest neighbors in a feature
//! space (L2) or all samples sharing its label; every other sample is a
//! negative candidate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Default neighbor count for feature-space mining.
pub const DEFAULT_N_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    FeatureKnn,
    LabelMatch,
}

/// Per-anchor positive candidate sets; the negative set is the complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub n: usize,
    pub mode: MiningMode,
    /// positives[a] lists candidate positive indices for anchor a,
    /// ordered by increasing distance (feature_knn) or index (label_match).
    pub positives: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn n_samples(&self) -> usize {
        self.positives.len()
    }

    /// Anchors that admit at least one positive and one negative.
    pub fn eligible_anchors(&self) -> Vec<usize> {
        let n = self.n_samples();
        (0..n)
            .filter(|&a| {
                let p = &self.positives[a];
                !p.is_empty() && p.len() + 1 < n
            })
            .collect()
    }

    pub fn is_positive(&self, anchor: usize, candidate: usize) -> bool {
        self.positives[anchor].contains(&candidate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mines the n nearest neighbors of every sample under the L2 norm.
/// Distance ties break toward the lower sample index.
pub fn mine_feature_knn(x: &FeatureMatrix, n: usize) -> Result<NeighborIndex> {
    let total = x.n_samples();
    if total < 3 {
        return Err(Error::TooFewSamples { need: 3, got: total });
    }
    if n == 0 {
        return Err(Error::Config("neighbor count n must be >= 1".into()));
    }
    if n >= total {
        return Err(Error::NeighborCountTooLarge { n, total });
    }
    let d = x.n_features();
    let mut positives = Vec::with_capacity(total);
    for a in 0..total {
        let mut dists: Vec<(f64, usize)> = (0..total)
            .filter(|&b| b != a)
            .map(|b| {
                let dist: f64 = (0..d)
                    .map(|k| (x.data[[a, k]] - x.data[[b, k]]).powi(2))
                    .sum();
                (dist, b)
            })
            .collect();
        dists.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
        positives.push(dists[..n].iter().map(|&(_, b)| b).collect());
    }
    Ok(NeighborIndex {
        n,
        mode: MiningMode::FeatureKnn,
        positives,
    })
}

/// Positives are all samples with the anchor's label, anchor excluded.
pub fn mine_label_match<L: PartialEq>(labels: &[L]) -> Result<NeighborIndex> {
    let total = labels.len();
    if total < 3 {
        return Err(Error::TooFewSamples { need: 3, got: total });
    }
    let positives = (0..total)
        .map(|a| {
            (0..total)
                .filter(|&b| b != a && labels[b] == labels[a])
                .collect()
        })
        .collect();
    Ok(NeighborIndex {
        n: 0,
        mode: MiningMode::LabelMatch,
        positives,
    })
}

/// Samples `count` triplets: anchor uniform over eligible anchors, positive
/// uniform over its candidates, negative uniform over the complement.
/// Deterministic given the seed.
pub fn sample_triplets(idx: &NeighborIndex, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_triplets_with(idx, count, &mut rng)
}

/// As [`sample_triplets`] but drawing from a caller-owned generator, so a
/// training loop can interleave sampling with other randomized steps.
pub fn sample_triplets_with(
    idx: &NeighborIndex,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    let eligible = idx.eligible_anchors();
    if eligible.is_empty() {
        return Err(Error::NoEligibleAnchor);
    }
    let total = idx.n_samples();
    let mut triplets = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = eligible[rng.gen_range(0..eligible.len())];
        let pos_set = &idx.positives[anchor];
        let positive = pos_set[rng.gen_range(0..pos_set.len())];
        let negatives: Vec<usize> = (0..total)
            .filter(|&b| b != anchor && !pos_set.contains(&b))
            .collect();
        let negative = negatives[rng.gen_range(0..negatives.len())];
        triplets.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(triplets)
}

pub fn save_index(path: &std::path::Path, idx: &NeighborIndex) -> Result<()> {
    let json = serde_json::to_string_pretty(idx).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &std::path::Path) -> Result<NeighborIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub mod oracle {
    //! O(N^2) full-sort nearest-neighbor reference with the same
    //! lower-index tie-break, used to check the mining path.

    pub fn knn_full_sort(points: &[Vec<f64>], n: usize) -> Vec<Vec<usize>> {
        let total = points.len();
        (0..total)
            .map(|a| {
                let mut order: Vec<usize> = (0..total).filter(|&b| b != a).collect();
                order.sort_by(|&p, &q| {
                    let dp: f64 = points[a]
                        .iter()
                        .zip(&points[p])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    let dq: f64 = points[a]
                        .iter()
                        .zip(&points[q])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    dp.partial_cmp(&dq).unwrap().then(p.cmp(&q))
                });
                order.truncate(n);
                order
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SampleId;
    use crate::features::FeatureVector;

    fn matrix(points: &[Vec<f64>]) -> FeatureMatrix {
        let rows = points
            .iter()
            .enumerate()
            .map(|(i, p)| FeatureVector::new(SampleId::new("x", 1, (i + 1) as u32), "f", p.clone()))
            .collect();
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn line_of_three_points() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![3.0]]);
        let idx = mine_feature_knn(&x, 1).unwrap();
        assert_eq!(idx.positives, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn matches_full_sort_oracle_with_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // Snap coordinates to a coarse grid to provoke exact ties.
        let points: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| f64::from(rng.gen_range(-2i32..3))).collect())
            .collect();
        let x = matrix(&points);
        let idx = mine_feature_knn(&x, 10).unwrap();
        assert_eq!(idx.positives, oracle::knn_full_sort(&points, 10));
    }

    #[test]
    fn label_match_partition() {
        let idx = mine_label_match(&["a", "a", "b"]).unwrap();
        assert_eq!(idx.positives, vec![vec![1], vec![0], vec![]]);
        // Anchor 2 has no positive, anchors 0 and 1 have no negative
        // besides index 2.
        assert_eq!(idx.eligible_anchors(), vec![0, 1]);
    }

    #[test]
    fn n_too_large_errors() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![2.0]]);
        assert!(matches!(
            mine_feature_knn(&x, 3),
            Err(Error::NeighborCountTooLarge { .. })
        ));
    }

    #[test]
    fn too_few_samples_errors() {
        let x = matrix(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            mine_feature_knn(&x, 1),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn scaling_leaves_index_unchanged() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let scaled: Vec<Vec<f64>> =
            points.iter().map(|p| p.iter().map(|v| v * 37.5).collect()).collect();
        let a = mine_feature_knn(&matrix(&points), 4).unwrap();
        let b = mine_feature_knn(&matrix(&scaled), 4).unwrap();
        assert_eq!(a.positives, b.positives);
    }

    #[test]
    fn permutation_equivariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let points: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Reverse as the permutation: old index i -> new index N-1-i.
        let n = points.len();
        let permuted: Vec<Vec<f64>> = points.iter().rev().cloned().collect();
        let a = mine_feature_knn(&matrix(&points), 3).unwrap();
        let b = mine_feature_knn(&matrix(&permuted), 3).unwrap();
        for i in 0..n {
            let mapped: Vec<usize> = a.positives[i].iter().map(|&j| n - 1 - j).collect();
            // The permutation reverses index order, so tie-breaks can pick
            // the other member of an exact tie; random reals make ties
            // measure-zero here.
            assert_eq!(b.positives[n - 1 - i], mapped);
        }
    }

    #[test]
    fn sampled_triplets_satisfy_membership() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let idx = mine_feature_knn(&matrix(&points), 4).unwrap();
        for t in sample_triplets(&idx, 1000, 7).unwrap() {
            assert!(t.anchor != t.positive && t.anchor != t.negative && t.positive != t.negative);
            assert!(idx.is_positive(t.anchor, t.positive));
            assert!(!idx.is_positive(t.anchor, t.negative));
        }
    }

    #[test]
    fn forced_positive_choice() {
        let x = matrix(&[vec![0.0], vec![0.1], vec![5.0], vec![9.0]]);
        let idx = mine_feature_knn(&x, 1).unwrap();
        for t in sample_triplets(&idx, 50, 3).unwrap() {
            assert_eq!(t.positive, idx.positives[t.anchor][0]);
        }
    }

    #[test]
    fn same_seed_same_triplets() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![2.0], vec![4.0]]);
        let idx = mine_feature_knn(&x, 2).unwrap();
        assert_eq!(
            sample_triplets(&idx, 100, 5).unwrap(),
            sample_triplets(&idx, 100, 5).unwrap()
        );
    }

    #[test]
    fn all_neighbors_means_no_negatives() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![2.0], vec![4.0]]);
        let idx = mine_feature_knn(&x, 3).unwrap();
        for a in 0..4 {
            assert_eq!(idx.positives[a].len(), 3);
        }
        assert!(matches!(
            sample_triplets(&idx, 10, 0),
            Err(Error::NoEligibleAnchor)
        ));
    }

    #[test]
    fn index_round_trip() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]);
        let idx = mine_feature_knn(&x, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        save_index(&path, &idx).unwrap();
        assert_eq!(load_index(&path).unwrap(), idx);
    }
}
