//! Sample/batch allocation and the telescopic multi-level estimator.
//!
//! For levels `1..=m` with per-level index sets `S_i` of size `B_i`,
//!
//! ```text
//! L = (1/B_1) Σ_{j∈S_1} X¹(a_j) + Σ_{i=2}^{m} (1/B_i) Σ_{j∈S_i} [Xⁱ(a_j) − X^{i−1}(a_j)]
//! ```
//!
//! where `Xⁱ` is the model loss on the level-`i` copy of a sample. The
//! gradient is the same combination of per-sample gradients.

use serde::{Deserialize, Serialize};

use crate::batcher::Batch;
use crate::datagen::MultiResDataset;
use crate::model::{Evaluator, GradVector, ModelParams};
use crate::multires::ResolutionLevel;
use crate::par::REDUCTION_CHUNK;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationStrategy {
    /// `N_i = δ^{m−i} N_m`.
    Geometric { delta: f64 },
    /// Explicit counts, coarsest first.
    Prescribed { counts: Vec<usize> },
    /// `N_i ∝ 2^{−(2k+d) i / 2}`.
    Optimal { k: f64, d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    /// Each level's batch is drawn independently from its pool.
    #[default]
    Random,
    /// Each level's batch is drawn from the batch one level coarser.
    Nested,
}

/// Split `n_total` samples over `m` levels.
///
/// Geometric and optimal allocations solve for `N_m = ⌊n_total / Σ r^{m−i}⌋`,
/// set `N_i = ⌊r^{m−i} N_m⌋` and put the remainder on level 1, so the counts
/// always sum to `n_total`.
pub fn allocate_samples(
    strategy: &AllocationStrategy,
    n_total: usize,
    m: usize,
) -> Result<Vec<usize>> {
    if m == 0 || n_total < m {
        return Err(Error::InvalidArgument(format!(
            "cannot allocate {n_total} samples over {m} levels"
        )));
    }
    let ratio = match strategy {
        AllocationStrategy::Prescribed { counts } => {
            if counts.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "{} prescribed counts for {m} levels",
                    counts.len()
                )));
            }
            if counts.windows(2).any(|w| w[0] < w[1]) || counts.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "prescribed counts {counts:?} must be positive and non-increasing"
                )));
            }
            if counts.iter().sum::<usize>() != n_total {
                return Err(Error::InvalidArgument(format!(
                    "prescribed counts {counts:?} do not sum to {n_total}"
                )));
            }
            return Ok(counts.clone());
        }
        AllocationStrategy::Geometric { delta } => {
            if !delta.is_finite() || *delta < 1.0 {
                return Err(Error::InvalidArgument(format!("δ must be ≥ 1, got {delta}")));
            }
            *delta
        }
        AllocationStrategy::Optimal { k, d } => {
            if !(*k >= 1.0 && *d >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "optimal allocation needs k, d ≥ 1, got k = {k}, d = {d}"
                )));
            }
            2f64.powf((2.0 * k + d) / 2.0)
        }
    };
    let weights: Vec<f64> = (1..=m).map(|i| ratio.powi((m - i) as i32)).collect();
    let finest = (n_total as f64 / weights.iter().sum::<f64>()).floor() as usize;
    if finest == 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_total} samples leave none for the finest of {m} levels at ratio {ratio}"
        )));
    }
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (w * finest as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    counts[0] += n_total - assigned;
    Ok(counts)
}

/// `B_i = round(δ^{m−i} · b_m)`, ties to even.
pub fn batch_sizes(b_m: usize, delta: f64, m: usize) -> Vec<usize> {
    (1..=m)
        .map(|i| (delta.powi((m - i) as i32) * b_m as f64).round_ties_even() as usize)
        .collect()
}

/// Per-level sample counts and batch sizes for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    /// Levels used by the estimator, coarsest first.
    pub levels: Vec<ResolutionLevel>,
    /// Training samples available to the schedule.
    pub n_total: usize,
    pub sample_counts: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub allocation: AllocationStrategy,
    pub sampling: SamplingStrategy,
    pub delta: f64,
}

impl LevelSchedule {
    /// Allocate counts with `allocation` and batch sizes as `δ^{m−i} b_m`.
    pub fn new(
        levels: Vec<ResolutionLevel>,
        n_total: usize,
        allocation: AllocationStrategy,
        finest_batch: usize,
        delta: f64,
        sampling: SamplingStrategy,
    ) -> Result<Self> {
        let m = levels.len();
        let sample_counts = allocate_samples(&allocation, n_total, m)?;
        if finest_batch == 0 || delta.is_nan() || delta < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "need b_m ≥ 1 and δ ≥ 1, got b_m = {finest_batch}, δ = {delta}"
            )));
        }
        let schedule = Self {
            batch_sizes: batch_sizes(finest_batch, delta, m),
            levels,
            n_total,
            sample_counts,
            allocation,
            sampling,
            delta,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Geometric allocation and batch sizes sharing one `δ`.
    pub fn geometric(
        levels: Vec<ResolutionLevel>,
        n_total: usize,
        delta: f64,
        finest_batch: usize,
        sampling: SamplingStrategy,
    ) -> Result<Self> {
        Self::new(
            levels,
            n_total,
            AllocationStrategy::Geometric { delta },
            finest_batch,
            delta,
            sampling,
        )
    }

    /// Single-level schedule: plain mini-batching over all samples.
    pub fn single(level: ResolutionLevel, n_total: usize, batch: usize) -> Result<Self> {
        Self::geometric(vec![level], n_total, 1.0, batch, SamplingStrategy::Random)
    }

    pub fn m(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 || self.sample_counts.len() != m || self.batch_sizes.len() != m {
            return Err(Error::InvalidArgument("schedule lists have inconsistent lengths".into()));
        }
        let non_increasing = |v: &[usize]| v.windows(2).all(|w| w[0] >= w[1]);
        if !non_increasing(&self.sample_counts) || !non_increasing(&self.batch_sizes) {
            return Err(Error::InvalidArgument(format!(
                "counts {:?} and batch sizes {:?} must be non-increasing",
                self.sample_counts, self.batch_sizes
            )));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        for (i, (b, n)) in self.batch_sizes.iter().zip(&self.sample_counts).enumerate() {
            if b > n {
                return Err(Error::InvalidArgument(format!(
                    "level {}: batch size {b} exceeds {n} samples",
                    i + 1
                )));
            }
        }
        if self.sample_counts.iter().sum::<usize>() > self.n_total + m {
            return Err(Error::InvalidArgument("sample counts exceed the dataset".into()));
        }
        if self.sample_counts[0] > self.n_total {
            return Err(Error::InvalidArgument("level-1 pool exceeds the dataset".into()));
        }
        if self
            .levels
            .windows(2)
            .any(|w| w[0].points_per_side >= w[1].points_per_side || w[0].dim != w[1].dim)
        {
            return Err(Error::InvalidHierarchy("schedule levels must refine strictly".into()));
        }
        Ok(())
    }
}

/// Telescopic decomposition of one batch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcLossReport {
    pub total: f64,
    /// `(1/B_1) Σ X¹`.
    pub coarse_term: f64,
    /// `(1/B_i) Σ [Xⁱ − X^{i−1}]` for `i = 2..=m`.
    pub pair_terms: Vec<f64>,
}

/// Per-level evaluators for one parameter vector over a dataset.
pub struct MlmcEstimator<'a> {
    dataset: &'a MultiResDataset,
    positions: Vec<usize>,
    evaluators: Vec<Evaluator<'a>>,
    n_params: usize,
}

/// Sums for one level: `+` over `S_ℓ`, `−` over `S_{ℓ+1}`.
struct LevelSums {
    plus_loss: f64,
    minus_loss: f64,
    plus: Vec<f64>,
    minus: Vec<f64>,
    /// Loss of every sample in the union, in union order.
    losses: Vec<(usize, f64)>,
}

impl<'a> MlmcEstimator<'a> {
    pub fn new(
        params: &'a ModelParams,
        dataset: &'a MultiResDataset,
        levels: &[ResolutionLevel],
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("no levels".into()));
        }
        let positions = levels
            .iter()
            .map(|l| {
                dataset.level_position(l).ok_or_else(|| {
                    Error::ResolutionMismatch(format!(
                        "dataset has no level with R = {}",
                        l.points_per_side
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidHierarchy("levels must be ordered coarse to fine".into()));
        }
        let evaluators = positions
            .iter()
            .map(|&p| Evaluator::new(params, &dataset.hierarchy[p]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            positions,
            evaluators,
            n_params: params.len(),
        })
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.sets.len() != self.m() {
            return Err(Error::ResolutionMismatch(format!(
                "batch has {} index sets for {} levels",
                batch.sets.len(),
                self.m()
            )));
        }
        let n = self.dataset.n_samples();
        for (i, set) in batch.sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidArgument(format!("level {} index set is empty", i + 1)));
            }
            if let Some(&j) = set.iter().find(|&&j| j >= n) {
                return Err(Error::IndexOutOfRange { level: i + 1, index: j, len: n });
            }
        }
        Ok(())
    }

    /// Loss and gradient of every sample needed at level `l`, folded into
    /// the `+` and `−` sums in a fixed order.
    fn level_sums(&self, batch: &Batch, l: usize, exec: Execution) -> Result<LevelSums> {
        let own = &batch.sets[l];
        let finer: &[usize] = batch.sets.get(l + 1).map_or(&[], Vec::as_slice);
        let mut union: Vec<(usize, bool, bool)> = own
            .iter()
            .map(|&j| (j, true, finer.contains(&j)))
            .collect();
        union.extend(finer.iter().filter(|j| !own.contains(j)).map(|&j| (j, false, true)));

        let eval = &self.evaluators[l];
        let (inputs, outputs) = (
            &self.dataset.inputs[self.positions[l]],
            &self.dataset.outputs[self.positions[l]],
        );
        let p = self.n_params;
        let partials = exec.map_chunks(&union, REDUCTION_CHUNK, |chunk| -> Result<LevelSums> {
            let mut acc = LevelSums {
                plus_loss: 0.0,
                minus_loss: 0.0,
                plus: vec![0.0; p],
                minus: if finer.is_empty() { Vec::new() } else { vec![0.0; p] },
                losses: Vec::with_capacity(chunk.len()),
            };
            let mut g = vec![0.0; p];
            for &(j, in_own, in_finer) in chunk {
                g.fill(0.0);
                let loss = eval.loss_and_grad_into(&inputs[j], &outputs[j], 1.0, &mut g)?;
                if in_own {
                    acc.plus_loss += loss;
                    add_into(&mut acc.plus, &g);
                }
                if in_finer {
                    acc.minus_loss += loss;
                    add_into(&mut acc.minus, &g);
                }
                acc.losses.push((j, loss));
            }
            Ok(acc)
        });
        let mut total = LevelSums {
            plus_loss: 0.0,
            minus_loss: 0.0,
            plus: vec![0.0; p],
            minus: if finer.is_empty() { Vec::new() } else { vec![0.0; p] },
            losses: Vec::with_capacity(union.len()),
        };
        for part in partials {
            let part = part?;
            total.plus_loss += part.plus_loss;
            total.minus_loss += part.minus_loss;
            add_into(&mut total.plus, &part.plus);
            add_into(&mut total.minus, &part.minus);
            total.losses.extend(part.losses);
        }
        Ok(total)
    }

    fn report(&self, batch: &Batch, per_level: &[Vec<(usize, f64)>]) -> MlmcLossReport {
        let lookup = |l: usize, j: usize| {
            per_level[l].iter().find(|(k, _)| *k == j).map(|(_, v)| *v).unwrap()
        };
        let mean = |set: &[usize], f: &dyn Fn(usize) -> f64| {
            set.iter().map(|&j| f(j)).sum::<f64>() / set.len() as f64
        };
        let coarse_term = mean(&batch.sets[0], &|j| lookup(0, j));
        let pair_terms: Vec<f64> = (1..self.m())
            .map(|i| mean(&batch.sets[i], &|j| lookup(i, j) - lookup(i - 1, j)))
            .collect();
        MlmcLossReport {
            total: coarse_term + pair_terms.iter().sum::<f64>(),
            coarse_term,
            pair_terms,
        }
    }

    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        exec: Execution,
    ) -> Result<(MlmcLossReport, GradVector)> {
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.n_params];
        let mut losses = Vec::with_capacity(self.m());
        for l in 0..self.m() {
            let sums = self.level_sums(batch, l, exec)?;
            let b_own = batch.sets[l].len() as f64;
            match batch.sets.get(l + 1) {
                Some(finer) => {
                    let b_finer = finer.len() as f64;
                    for ((g, p), q) in grad.iter_mut().zip(&sums.plus).zip(&sums.minus) {
                        *g += p / b_own - q / b_finer;
                    }
                }
                None => {
                    for (g, p) in grad.iter_mut().zip(&sums.plus) {
                        *g += p / b_own;
                    }
                }
            }
            losses.push(sums.losses);
        }
        let report = self.report(batch, &losses);
        if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("multi-level loss or gradient".into()));
        }
        Ok((report, GradVector(grad)))
    }

    /// Loss report only; evaluates each needed (level, sample) pair once.
    pub fn loss(&self, batch: &Batch, exec: Execution) -> Result<MlmcLossReport> {
        self.check_batch(batch)?;
        let per_level = (0..self.m())
            .map(|l| {
                let mut needed: Vec<usize> = batch.sets[l].clone();
                if let Some(finer) = batch.sets.get(l + 1) {
                    needed.extend(finer.iter().filter(|j| !batch.sets[l].contains(j)));
                }
                let eval = &self.evaluators[l];
                let pos = self.positions[l];
                exec.map(&needed, |&j| {
                    eval.loss(&self.dataset.inputs[pos][j], &self.dataset.outputs[pos][j])
                        .map(|v| (j, v))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let report = self.report(batch, &per_level);
        if !report.total.is_finite() {
            return Err(Error::NonFinite("multi-level loss".into()));
        }
        Ok(report)
    }

    /// `∇Xⁱ(a_j) − ∇X^{i−1}(a_j)` for level `i` (1-based, `i ≥ 2`).
    pub fn gradient_difference(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i < 2 || i > self.m() {
            return Err(Error::InvalidArgument(format!("level {i} has no coarser partner")));
        }
        let mut g = vec![0.0; self.n_params];
        for (l, sign) in [(i - 1, 1.0), (i - 2, -1.0)] {
            let pos = self.positions[l];
            let (a, u) = self.dataset.pair(pos, j)?;
            self.evaluators[l].loss_and_grad_into(a, u, sign, &mut g)?;
        }
        Ok(g)
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn mlmc_loss(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    batch: &Batch,
    exec: Execution,
) -> Result<MlmcLossReport> {
    MlmcEstimator::new(params, dataset, levels)?.loss(batch, exec)
}

pub fn mlmc_grad(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    batch: &Batch,
    exec: Execution,
) -> Result<GradVector> {
    mlmc_loss_and_grad(params, dataset, levels, batch, exec).map(|(_, g)| g)
}

pub fn mlmc_loss_and_grad(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    batch: &Batch,
    exec: Execution,
) -> Result<(MlmcLossReport, GradVector)> {
    MlmcEstimator::new(params, dataset, levels)?.loss_and_grad(batch, exec)
}

/// Unbiased sample variance, over samples `0..n_probe`, of
/// `‖∇Xⁱ(a) − ∇X^{i−1}(a)‖₂` (level `i` is 1-based within `levels`).
pub fn level_difference_variance(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    i: usize,
    n_probe: usize,
    exec: Execution,
) -> Result<f64> {
    if n_probe < 2 {
        return Err(Error::InvalidArgument("variance needs at least two probes".into()));
    }
    if n_probe > dataset.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "{n_probe} probes requested but only {} samples exist",
            dataset.n_samples()
        )));
    }
    let est = MlmcEstimator::new(params, dataset, levels)?;
    let probes: Vec<usize> = (0..n_probe).collect();
    let norms = exec
        .map(&probes, |&j| {
            est.gradient_difference(i, j)
                .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_variance(&norms))
}

pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}
