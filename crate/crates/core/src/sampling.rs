//! Training-set assembly for the fine-tuning rounds: replicas of
//! threshold-passing molecules plus cluster-proportional draws of unscored
//! ones, with the four score-to-fraction conversion methods.

use std::collections::HashSet;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Clustering;
use crate::scoring::ScoreRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplingError {
    #[error("all cluster scores are zero; fractions undefined for this method")]
    AllZeroScores,
    #[error("generated pool is empty")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplingMethod {
    Uniform,
    Linear,
    Softsub,
    Softdiv { divf: f64 },
}

/// Mean score per cluster over its scored members; `None` where a cluster
/// contributed nothing to the scoring sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScoreMap {
    pub means: Vec<Option<f64>>,
}

impl ClusterScoreMap {
    pub fn from_records(records: &[ScoreRecord], k: usize) -> Self {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for r in records {
            if let Some(c) = r.cluster {
                sums[c] += r.score;
                counts[c] += 1;
            }
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| if n > 0 { Some(s / n as f64) } else { None })
            .collect();
        ClusterScoreMap { means }
    }

    fn defined(&self) -> Vec<(usize, f64)> {
        self.means
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|v| (i, v)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub fractions: Vec<f64>,
    pub quotas: Vec<usize>,
    pub method: SamplingMethod,
}

/// Convert cluster mean scores to sampling fractions. Clusters without a
/// defined mean get fraction zero; the rest sum to one.
pub fn to_fractions(
    scores: &ClusterScoreMap,
    method: SamplingMethod,
) -> Result<Vec<f64>, SamplingError> {
    let defined = scores.defined();
    if defined.is_empty() {
        return Err(SamplingError::AllZeroScores);
    }
    let mut fractions = vec![0.0; scores.means.len()];
    match method {
        SamplingMethod::Uniform => {
            for &(i, _) in &defined {
                fractions[i] = 1.0 / defined.len() as f64;
            }
        }
        SamplingMethod::Linear => {
            let total: f64 = defined.iter().map(|&(_, s)| s).sum();
            if total <= 0.0 {
                return Err(SamplingError::AllZeroScores);
            }
            for &(i, s) in &defined {
                fractions[i] = s / total;
            }
        }
        SamplingMethod::Softsub => {
            let s_max = defined.iter().map(|&(_, s)| s).fold(f64::MIN, f64::max);
            let total: f64 = defined.iter().map(|&(_, s)| (s - s_max).exp()).sum();
            for &(i, s) in &defined {
                fractions[i] = (s - s_max).exp() / total;
            }
        }
        SamplingMethod::Softdiv { divf } => {
            assert!(divf > 0.0 && divf <= 1.0, "divf must be in (0, 1]");
            let s_max = defined.iter().map(|&(_, s)| s).fold(f64::MIN, f64::max);
            if s_max <= 0.0 {
                return Err(SamplingError::AllZeroScores);
            }
            let total: f64 = defined
                .iter()
                .map(|&(_, s)| (s / (divf * s_max)).exp())
                .sum();
            for &(i, s) in &defined {
                fractions[i] = (s / (divf * s_max)).exp() / total;
            }
        }
    }
    Ok(fractions)
}

/// Smallest replica count N with N x passers >= floor; zero when there are
/// no passers.
pub fn replica_multiplier(passers: usize, floor: usize) -> usize {
    if passers == 0 {
        0
    } else {
        floor.div_ceil(passers)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Integer per-cluster quotas: round-half-up of fraction x target, capped
/// at each cluster's population, with the rounding residual and any capped
/// surplus redistributed over clusters that still have capacity,
/// proportionally to their fractions. Ends with quotas summing to the
/// target unless the sampleable population runs out first.
pub fn allocate_quotas(fractions: &[f64], target: usize, populations: &[usize]) -> Vec<usize> {
    assert_eq!(fractions.len(), populations.len());
    let mut quotas: Vec<usize> = fractions
        .iter()
        .zip(populations)
        .map(|(&f, &p)| round_half_up(f * target as f64).min(p))
        .collect();

    loop {
        let total: usize = quotas.iter().sum();
        if total == target {
            break;
        }
        if total > target {
            // Shave the most over-allocated cluster one unit at a time.
            let i = (0..quotas.len())
                .filter(|&i| quotas[i] > 0)
                .max_by(|&a, &b| {
                    let ea = quotas[a] as f64 - fractions[a] * target as f64;
                    let eb = quotas[b] as f64 - fractions[b] * target as f64;
                    ea.partial_cmp(&eb).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            quotas[i] -= 1;
            continue;
        }
        let capacity: Vec<usize> = (0..quotas.len())
            .filter(|&i| quotas[i] < populations[i] && fractions[i] > 0.0)
            .collect();
        if capacity.is_empty() {
            break;
        }
        let weight_sum: f64 = capacity.iter().map(|&i| fractions[i]).sum();
        let shortfall = target - total;
        let mut added = 0;
        for &i in &capacity {
            let ideal = shortfall as f64 * fractions[i] / weight_sum;
            let add = round_half_up(ideal).min(populations[i] - quotas[i]);
            quotas[i] += add;
            added += add;
        }
        if added == 0 {
            // Rounding stalled; hand one unit to the biggest remaining fraction.
            let i = capacity
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    fractions[a]
                        .partial_cmp(&fractions[b])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            quotas[i] += 1;
        }
    }
    quotas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALTrainingSet {
    /// Replica part first, then the sampled part.
    pub molecules: Vec<String>,
    pub replica_multiplier: usize,
    pub passer_count: usize,
    pub per_cluster_draws: Vec<usize>,
    /// Set when the requested method degenerated and uniform was used.
    pub fell_back_to_uniform: bool,
}

/// Build one fine-tuning set: every scored molecule at or above the
/// threshold replicated `replica_multiplier` times, plus quota draws of
/// unscored pool members per cluster. `method = None` is the no-clustering
/// control and produces the replica part alone. Pool entries are assumed
/// deduplicated canonical strings aligned with `clustering.assignments`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_al_set(
    records: &[ScoreRecord],
    threshold: f64,
    clustering: &Clustering,
    pool: &[String],
    method: Option<SamplingMethod>,
    replica_floor: usize,
    sample_target: usize,
    rng: &mut impl Rng,
) -> Result<ALTrainingSet, SamplingError> {
    if pool.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    let passers: Vec<&ScoreRecord> = records.iter().filter(|r| r.score >= threshold).collect();
    let n = replica_multiplier(passers.len(), replica_floor);
    let mut molecules: Vec<String> =
        Vec::with_capacity(n * passers.len() + if method.is_some() { sample_target } else { 0 });
    for _ in 0..n {
        molecules.extend(passers.iter().map(|r| r.smiles.clone()));
    }

    let Some(method) = method else {
        return Ok(ALTrainingSet {
            molecules,
            replica_multiplier: n,
            passer_count: passers.len(),
            per_cluster_draws: Vec::new(),
            fell_back_to_uniform: false,
        });
    };

    let scored_keys: HashSet<&str> = records.iter().map(|r| r.smiles.as_str()).collect();
    let mut unscored: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for (i, smiles) in pool.iter().enumerate() {
        if !scored_keys.contains(smiles.as_str()) {
            unscored[clustering.assignments[i]].push(i);
        }
    }
    let populations: Vec<usize> = unscored.iter().map(Vec::len).collect();

    let mean_scores = ClusterScoreMap::from_records(records, clustering.k);
    let (fractions, fell_back) = match to_fractions(&mean_scores, method) {
        Ok(f) => (f, false),
        Err(SamplingError::AllZeroScores) => {
            (to_fractions(&mean_scores, SamplingMethod::Uniform)?, true)
        }
        Err(e) => return Err(e),
    };
    let quotas = allocate_quotas(&fractions, sample_target, &populations);

    let mut draws = vec![0usize; clustering.k];
    for (c, members) in unscored.iter().enumerate() {
        if quotas[c] == 0 {
            continue;
        }
        let take = index_sample(rng, members.len(), quotas[c]);
        for idx in take.iter() {
            molecules.push(pool[members[idx]].clone());
        }
        draws[c] = quotas[c];
    }

    Ok(ALTrainingSet {
        molecules,
        replica_multiplier: n,
        passer_count: passers.len(),
        per_cluster_draws: draws,
        fell_back_to_uniform: fell_back,
    })
}
