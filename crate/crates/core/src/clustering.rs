//! k-means over proxy-space points, with a restart/selection protocol and
//! the per-cluster scoring sample.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusteringError {
    #[error("cannot fit {k} clusters to {points} points")]
    TooFewPoints { points: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Population variance of cluster sizes, empty clusters included.
    pub size_variance: f64,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Sampled points for oracle scoring, tagged with their cluster of origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSample {
    pub members: Vec<(usize, usize)>,
    pub target: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: the first centroid uniform, each further centroid
/// drawn with probability proportional to squared distance from the ones
/// already chosen.
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..points.len());
    centroids.push(points[first].clone());
    let mut weights: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = weights.iter().sum();
        let chosen = if total > 0.0 {
            WeightedIndex::new(&weights).unwrap().sample(rng)
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[chosen].clone());
        for (w, p) in weights.iter_mut().zip(points) {
            *w = w.min(dist2(p, centroids.last().unwrap()));
        }
    }
    centroids
}

pub struct LloydRun {
    pub clustering: Clustering,
    /// Inertia after each assignment step, in iteration order.
    pub inertia_history: Vec<f64>,
}

/// Lloyd iterations from the given initial centroids until the assignment
/// reaches a fixpoint or `max_iter` rounds. An empty cluster is re-seeded
/// with the point currently farthest from its assigned centroid.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize) -> LloydRun {
    let k = init.len();
    let n = points.len();
    let mut centroids = init;
    let mut assignments: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..max_iter {
        let mut dists = vec![0f64; n];
        let mut new_assignments = vec![0usize; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            new_assignments[i] = c;
            dists[i] = d;
        }

        let mut sizes = vec![0usize; k];
        for &c in &new_assignments {
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let farthest = (0..n)
                .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap())
                .unwrap();
            sizes[new_assignments[farthest]] -= 1;
            sizes[c] += 1;
            centroids[c] = points[farthest].clone();
            new_assignments[farthest] = c;
            dists[farthest] = 0.0;
        }

        history.push(dists.iter().sum());
        let converged = new_assignments == assignments;
        assignments = new_assignments;
        if converged {
            break;
        }

        let dim = centroids[0].len();
        let mut sums = vec![vec![0f64; dim]; k];
        for (p, &c) in points.iter().zip(&assignments) {
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= sizes[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
    }

    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &c)| dist2(p, &centroids[c]))
        .sum();
    let sizes = {
        let mut sizes = vec![0f64; k];
        for &c in &assignments {
            sizes[c] += 1.0;
        }
        sizes
    };
    let mean_size = n as f64 / k as f64;
    let size_variance = sizes
        .iter()
        .map(|s| (s - mean_size) * (s - mean_size))
        .sum::<f64>()
        / k as f64;

    LloydRun {
        clustering: Clustering {
            k,
            centroids,
            assignments,
            inertia,
            size_variance,
        },
        inertia_history: history,
    }
}

pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Run k-means `restarts` times with derived per-restart seeds. Restarts
/// execute in parallel; the derived seeding makes the result list identical
/// regardless of scheduling.
pub fn kmeans_restarts(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<Clustering>, ClusteringError> {
    if k == 0 || points.len() < k {
        return Err(ClusteringError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    Ok((0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r));
            let init = kmeans_pp_init(points, k, &mut rng);
            lloyd(points, init, MAX_LLOYD_ITERATIONS).clustering
        })
        .collect())
}

/// Two-stage selection: keep the five lowest-inertia candidates, then take
/// the one with the smallest cluster-size variance. Ties fall back to lower
/// inertia, then earlier position.
pub fn select_clustering(candidates: &[Clustering]) -> &Clustering {
    assert!(!candidates.is_empty(), "no clusterings to select from");
    let mut by_inertia: Vec<usize> = (0..candidates.len()).collect();
    by_inertia.sort_by(|&a, &b| {
        candidates[a]
            .inertia
            .partial_cmp(&candidates[b].inertia)
            .unwrap()
            .then(a.cmp(&b))
    });
    let shortlist = &by_inertia[..by_inertia.len().min(5)];
    let winner = shortlist
        .iter()
        .copied()
        .min_by(|&a, &b| {
            candidates[a]
                .size_variance
                .partial_cmp(&candidates[b].size_variance)
                .unwrap()
                .then(
                    candidates[a]
                        .inertia
                        .partial_cmp(&candidates[b].inertia)
                        .unwrap(),
                )
                .then(a.cmp(&b))
        })
        .unwrap();
    &candidates[winner]
}

/// Draw the scoring sample: up to `per_cluster` points from every cluster,
/// then top up uniformly from the leftovers of clusters bigger than
/// `per_cluster` until `total` points are reached. If the whole population
/// is no bigger than `total`, everything is returned.
pub fn sample_for_scoring(
    clustering: &Clustering,
    per_cluster: usize,
    total: usize,
    rng: &mut impl Rng,
) -> ScoringSample {
    let n = clustering.assignments.len();
    let mut members_by_cluster: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for (i, &c) in clustering.assignments.iter().enumerate() {
        members_by_cluster[c].push(i);
    }

    if n <= total {
        let mut members: Vec<(usize, usize)> = clustering
            .assignments
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, c))
            .collect();
        members.sort_unstable();
        return ScoringSample {
            members,
            target: total,
        };
    }

    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut leftover_pool: Vec<(usize, usize)> = Vec::new();
    for (c, members) in members_by_cluster.iter().enumerate() {
        if members.len() <= per_cluster {
            picked.extend(members.iter().map(|&i| (i, c)));
        } else {
            let take = index_sample(rng, members.len(), per_cluster);
            let mut taken = vec![false; members.len()];
            for idx in take.iter() {
                taken[idx] = true;
                picked.push((members[idx], c));
            }
            for (idx, &i) in members.iter().enumerate() {
                if !taken[idx] {
                    leftover_pool.push((i, c));
                }
            }
        }
    }

    if picked.len() > total {
        let keep = index_sample(rng, picked.len(), total);
        let mut kept: Vec<(usize, usize)> = keep.iter().map(|idx| picked[idx]).collect();
        kept.sort_unstable();
        return ScoringSample {
            members: kept,
            target: total,
        };
    }

    let shortfall = total - picked.len();
    if shortfall > 0 {
        let extra = index_sample(rng, leftover_pool.len(), shortfall.min(leftover_pool.len()));
        for idx in extra.iter() {
            picked.push(leftover_pool[idx]);
        }
    }
    picked.sort_unstable();
    ScoringSample {
        members: picked,
        target: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect()
    }

    #[test]
    fn square_corners() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let runs = kmeans_restarts(&points, 4, 3, 9).unwrap();
        for clustering in &runs {
            assert_eq!(clustering.inertia, 0.0);
            let mut sizes = clustering.cluster_sizes();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![1, 1, 1, 1]);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let points = seeded_points(20, 3, 5);
        let clustering = &kmeans_restarts(&points, 1, 1, 1).unwrap()[0];
        let mut mean = vec![0.0; 3];
        for p in &points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / points.len() as f64;
            }
        }
        for (c, m) in clustering.centroids[0].iter().zip(&mean) {
            assert!((c - m).abs() < 1e-12);
        }
        let expected: f64 = points.iter().map(|p| dist2(p, &mean)).sum();
        assert!((clustering.inertia - expected).abs() < 1e-9);
    }

    #[test]
    fn matches_independent_lloyd() {
        let points = seeded_points(30, 2, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = kmeans_pp_init(&points, 3, &mut rng);

        let run = lloyd(&points, init.clone(), MAX_LLOYD_ITERATIONS);
        assert!(run.clustering.cluster_sizes().iter().all(|&s| s > 0));

        // Plain Lloyd, written independently: exhaustive nearest assignment
        // and mean update until nothing moves.
        let mut centroids = init;
        let mut assignments = vec![0usize; points.len()];
        loop {
            let mut moved = false;
            for (i, p) in points.iter().enumerate() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, cent) in centroids.iter().enumerate() {
                    let d: f64 = p.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                if assignments[i] != best {
                    moved = true;
                }
                assignments[i] = best;
            }
            if !moved {
                break;
            }
            for c in 0..3 {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; 2];
                for p in &members {
                    for (m, x) in mean.iter_mut().zip(*p) {
                        *m += x / members.len() as f64;
                    }
                }
                centroids[c] = mean;
            }
        }
        let oracle_inertia: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &c)| dist2(p, &centroids[c]))
            .sum();
        assert!(
            (run.clustering.inertia - oracle_inertia).abs() < 1e-9,
            "{} vs {}",
            run.clustering.inertia,
            oracle_inertia
        );
    }

    #[test]
    fn inertia_monotone_and_consistent() {
        let points = seeded_points(60, 4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = kmeans_pp_init(&points, 5, &mut rng);
        let run = lloyd(&points, init, MAX_LLOYD_ITERATIONS);
        for w in run.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {w:?}");
        }
        let recomputed: f64 = points
            .iter()
            .zip(&run.clustering.assignments)
            .map(|(p, &c)| dist2(p, &run.clustering.centroids[c]))
            .sum();
        let rel = (run.clustering.inertia - recomputed).abs() / recomputed.max(1e-12);
        assert!(rel < 1e-6);
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &run.clustering.centroids);
            assert_eq!(c, run.clustering.assignments[i], "point {i} not nearest");
        }
    }

    #[test]
    fn restarts_reproducible() {
        let points = seeded_points(50, 3, 21);
        let a = kmeans_restarts(&points, 4, 6, 99).unwrap();
        let b = kmeans_restarts(&points, 4, 6, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.assignments, y.assignments);
            assert_eq!(x.inertia.to_bits(), y.inertia.to_bits());
        }
    }

    #[test]
    fn too_few_points() {
        let points = seeded_points(3, 2, 1);
        assert!(matches!(
            kmeans_restarts(&points, 4, 1, 0),
            Err(ClusteringError::TooFewPoints { points: 3, k: 4 })
        ));
    }

    fn dummy(inertia: f64, size_variance: f64) -> Clustering {
        Clustering {
            k: 1,
            centroids: vec![vec![0.0]],
            assignments: vec![0],
            inertia,
            size_variance,
        }
    }

    #[test]
    fn selection_rule() {
        let candidates: Vec<Clustering> = [
            (10.0, 5.0),
            (11.0, 1.0),
            (12.0, 9.0),
            (13.0, 2.0),
            (14.0, 7.0),
            (15.0, 0.0),
        ]
        .iter()
        .map(|&(i, v)| dummy(i, v))
        .collect();
        let chosen = select_clustering(&candidates);
        assert_eq!(chosen.inertia, 11.0);
        assert_eq!(chosen.size_variance, 1.0);

        let single = [dummy(3.0, 4.0)];
        assert_eq!(select_clustering(&single).inertia, 3.0);
    }

    #[test]
    fn selection_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let candidates: Vec<Clustering> = (0..100)
            .map(|_| dummy(rng.gen_range(0.0..100.0), rng.gen_range(0.0..10.0)))
            .collect();
        let chosen = select_clustering(&candidates);

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| candidates[a].inertia.partial_cmp(&candidates[b].inertia).unwrap());
        order.truncate(5);
        order.sort_by(|&a, &b| {
            candidates[a]
                .size_variance
                .partial_cmp(&candidates[b].size_variance)
                .unwrap()
        });
        let oracle = &candidates[order[0]];
        assert_eq!(chosen.inertia.to_bits(), oracle.inertia.to_bits());
        assert_eq!(chosen.size_variance.to_bits(), oracle.size_variance.to_bits());
    }

    fn synthetic_clustering(sizes: &[usize]) -> Clustering {
        let mut assignments = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            assignments.extend(std::iter::repeat(c).take(s));
        }
        Clustering {
            k: sizes.len(),
            centroids: vec![vec![0.0]; sizes.len()],
            assignments,
            inertia: 0.0,
            size_variance: 0.0,
        }
    }

    fn per_cluster_counts(sample: &ScoringSample, k: usize) -> Vec<usize> {
        let mut counts = vec![0usize; k];
        for &(_, c) in &sample.members {
            counts[c] += 1;
        }
        counts
    }

    #[test]
    fn quota_fills_total_exactly() {
        let clustering = synthetic_clustering(&[15; 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sample = sample_for_scoring(&clustering, 10, 200, &mut rng);
        assert_eq!(sample.members.len(), 200);
        assert_eq!(per_cluster_counts(&sample, 20), vec![10; 20]);
    }

    #[test]
    fn small_cluster_taken_whole() {
        let clustering = synthetic_clustering(&[3, 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample = sample_for_scoring(&clustering, 10, 13, &mut rng);
        assert_eq!(sample.members.len(), 13);
        assert_eq!(per_cluster_counts(&sample, 2), vec![3, 10]);
    }

    #[test]
    fn top_up_from_large_clusters() {
        let clustering = synthetic_clustering(&[5, 50, 50]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sample = sample_for_scoring(&clustering, 10, 30, &mut rng);
        assert_eq!(sample.members.len(), 30);
        let counts = per_cluster_counts(&sample, 3);
        assert_eq!(counts[0], 5);
        assert!(counts[1] >= 10 && counts[2] >= 10);
        assert_eq!(counts[1] + counts[2], 25);
        let mut seen = sample.members.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 30, "duplicate draws");
    }

    #[test]
    fn small_population_returned_whole() {
        let clustering = synthetic_clustering(&[4, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = sample_for_scoring(&clustering, 10, 50, &mut rng);
        assert_eq!(sample.members.len(), 7);
    }

    #[test]
    fn phase_one_overshoot_is_trimmed() {
        let clustering = synthetic_clustering(&[5, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = sample_for_scoring(&clustering, 10, 10, &mut rng);
        assert_eq!(sample.members.len(), 10);
        let counts = per_cluster_counts(&sample, 3);
        assert!(counts.iter().all(|&c| c <= 5));
    }
}
