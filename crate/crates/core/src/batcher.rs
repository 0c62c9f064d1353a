//! Per-epoch batch plans.
//!
//! Every epoch draws one permutation of the training indices; the level-`i`
//! pool is its first `N_i` entries, so pools are nested. The level-1 pool is
//! cut into `K = ⌊N_1 / B_1⌋` disjoint blocks. Deeper sets are drawn per batch
//! without replacement, either from the level's own pool (random) or from
//! the set one level coarser (nested).

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlmc::{LevelSchedule, SamplingStrategy};
use crate::multires::ResolutionLevel;
use crate::{Error, Result};

/// Index sets of one batch, coarsest level first. Each set is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub epoch_seed: u64,
}

impl BatchPlan {
    /// One line per batch: `k: [i, …] | [i, …] | …`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, batch) in self.batches.iter().enumerate() {
            let sets: Vec<String> = batch.sets.iter().map(|s| format!("{s:?}")).collect();
            let _ = writeln!(out, "{k}: {}", sets.join(" | "));
        }
        out
    }
}

/// Nested per-level pools drawn from one permutation of `0..n_total`.
pub fn pool_assignment(
    n_total: usize,
    sample_counts: &[usize],
    epoch_seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    pools_from(&mut rng, n_total, sample_counts)
}

fn pools_from(rng: &mut ChaCha8Rng, n_total: usize, counts: &[usize]) -> Result<Vec<Vec<usize>>> {
    if let Some(&n) = counts.iter().find(|&&n| n > n_total) {
        return Err(Error::InvalidArgument(format!(
            "pool of {n} exceeds the {n_total} available samples"
        )));
    }
    let mut perm: Vec<usize> = (0..n_total).collect();
    perm.shuffle(rng);
    Ok(counts.iter().map(|&n| perm[..n].to_vec()).collect())
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Batches for one epoch; a pure function of `(schedule, epoch_seed)`.
pub fn plan_epoch(schedule: &LevelSchedule, epoch_seed: u64) -> Result<BatchPlan> {
    schedule.validate()?;
    let (counts, sizes) = (&schedule.sample_counts, &schedule.batch_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let pools = pools_from(&mut rng, schedule.n_total, counts)?;
    let k = counts[0] / sizes[0];
    let batches = (0..k)
        .map(|b| {
            let mut sets = vec![sorted(pools[0][b * sizes[0]..(b + 1) * sizes[0]].to_vec())];
            for i in 1..schedule.m() {
                let source: &[usize] = match schedule.sampling {
                    SamplingStrategy::Random => &pools[i],
                    SamplingStrategy::Nested => &sets[i - 1],
                };
                let picked = sample(&mut rng, source.len(), sizes[i])
                    .into_iter()
                    .map(|p| source[p])
                    .collect();
                sets.push(sorted(picked));
            }
            Batch { sets }
        })
        .collect();
    Ok(BatchPlan { batches, epoch_seed })
}

/// Read order for one batch: level by level, each level's samples in
/// ascending index order. Level `ℓ` (1-based) reads `S_ℓ ∪ S_{ℓ+1}`, which is
/// everything the estimator evaluates at that resolution.
pub fn prefetch_layout(plan: &BatchPlan) -> Vec<Vec<(usize, usize)>> {
    plan.batches
        .iter()
        .map(|batch| {
            let mut reads = Vec::new();
            for (l, set) in batch.sets.iter().enumerate() {
                let mut union = set.clone();
                if let Some(finer) = batch.sets.get(l + 1) {
                    union.extend(finer);
                }
                union.sort_unstable();
                union.dedup();
                reads.extend(union.into_iter().map(|j| (l + 1, j)));
            }
            reads
        })
        .collect()
}

/// Replay one batch's reads, releasing a level's fields once the stream
/// moves on; returns the high-water mark of resident field values.
pub fn replay_residency(reads: &[(usize, usize)], levels: &[ResolutionLevel]) -> usize {
    let mut resident = 0;
    let mut peak = 0;
    let mut current = None;
    for &(level, _) in reads {
        if current != Some(level) {
            resident = 0;
            current = Some(level);
        }
        resident += levels[level - 1].len();
        peak = peak.max(resident);
    }
    peak
}
