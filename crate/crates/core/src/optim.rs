//! Optimizers and the multi-level training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batcher::plan_epoch;
use crate::datagen::{sample_seed, MultiResDataset};
use crate::mlmc::{LevelSchedule, MlmcEstimator};
use crate::model::{
    init_params, loss_and_grad, Evaluator, GradVector, ModelConfig, ModelParams, Normalization,
};
use crate::multires::ResolutionLevel;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    /// Adam moments; empty for SGD.
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let len = match config.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n_params,
        };
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    /// Apply one update to `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grad: &GradVector) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient has {} entries, parameters {}",
                grad.len(),
                params.len()
            )));
        }
        if grad.0.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let c = self.config;
        self.step_count += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values.iter_mut().zip(&grad.0) {
                    *p -= c.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
                }
                let t = self.step_count as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .values
                    .iter_mut()
                    .zip(&grad.0)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(
    params: &ModelParams,
    grad: &GradVector,
    state: &OptimizerState,
) -> Result<(ModelParams, OptimizerState)> {
    let (mut p, mut s) = (params.clone(), state.clone());
    s.step(&mut p, grad)?;
    Ok((p, s))
}

/// Training indices are `0..n_train`; the last `⌊N/5⌋` (at least one) are test.
pub fn train_test_split(n: usize) -> (usize, std::ops::Range<usize>) {
    let n_test = (n / 5).max(1).min(n);
    (n - n_test, n - n_test..n)
}

/// Mean loss over `indices` at one dataset level.
pub fn evaluate(
    params: &ModelParams,
    dataset: &MultiResDataset,
    indices: &[usize],
    level: &ResolutionLevel,
    exec: Execution,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let pos = dataset.level_position(level).ok_or_else(|| {
        Error::ResolutionMismatch(format!("dataset has no level with R = {}", level.points_per_side))
    })?;
    let eval = Evaluator::new(params, &dataset.hierarchy[pos])?;
    let losses = exec
        .map(indices, |&j| {
            let (a, u) = dataset.pair(pos, j)?;
            eval.loss(a, u)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Input/target statistics of the training split at the finest level.
pub fn fit_normalization(dataset: &MultiResDataset) -> Result<Normalization> {
    let (n_train, _) = train_test_split(dataset.n_samples());
    let pos = dataset.n_levels() - 1;
    Normalization::fit((0..n_train).map(|j| (&dataset.inputs[pos][j], &dataset.outputs[pos][j])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Model initialisation and batch-plan seed.
    pub seed: u64,
    /// Evaluate the test split every this many epochs (and after the last);
    /// 0 evaluates only after the last epoch.
    pub eval_every: usize,
    pub exec: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            eval_every: 1,
            exec: Execution::Parallel,
        }
    }
}

/// Where training starts from when not initialising fresh parameters.
#[derive(Debug, Clone)]
pub struct Resume {
    pub params: ModelParams,
    pub state: OptimizerState,
    /// Epochs already completed; continues the plan-seed sequence.
    pub epochs_done: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training-loop wall time (planning, gradients, updates).
    pub wall_s: f64,
    pub steps: usize,
    /// Batch means of the estimator loss and its terms.
    pub mlmc_total: f64,
    pub coarse_term: f64,
    pub pair_terms: Vec<f64>,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schedule: LevelSchedule,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub options: TrainOptions,
    pub initial_test_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub final_params: ModelParams,
    pub final_state: OptimizerState,
}

impl TrainReport {
    pub fn final_test_loss(&self) -> f64 {
        self.epochs
            .iter()
            .rev()
            .find_map(|e| e.test_loss)
            .unwrap_or(self.initial_test_loss)
    }

    /// Median epoch time after dropping the first (warm-up) epoch.
    pub fn median_epoch_wall_s(&self) -> f64 {
        let mut times: Vec<f64> = self.epochs.iter().skip(1).map(|e| e.wall_s).collect();
        if times.is_empty() {
            times = self.epochs.iter().map(|e| e.wall_s).collect();
        }
        if times.is_empty() {
            return 0.0;
        }
        times.sort_by(f64::total_cmp);
        let n = times.len();
        if n % 2 == 1 {
            times[n / 2]
        } else {
            0.5 * (times[n / 2 - 1] + times[n / 2])
        }
    }

    pub fn to_csv(&self) -> String {
        let m = self.schedule.m();
        let mut out = String::from("epoch,wall_s,mlmc_total,coarse_term");
        for i in 2..=m {
            let _ = write!(out, ",pair_term_{i}");
        }
        out.push_str(",test_loss\n");
        for e in &self.epochs {
            let _ = write!(out, "{},{},{},{}", e.epoch, e.wall_s, e.mlmc_total, e.coarse_term);
            for p in &e.pair_terms {
                let _ = write!(out, ",{p}");
            }
            match e.test_loss {
                Some(t) => {
                    let _ = writeln!(out, ",{t}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    sample_seed(seed.rotate_left(17) ^ 0xB47C_4E55, epoch)
}

fn check_split(dataset: &MultiResDataset, schedule: &LevelSchedule) -> Result<Vec<usize>> {
    let (n_train, test) = train_test_split(dataset.n_samples());
    if schedule.n_total > n_train {
        return Err(Error::InvalidArgument(format!(
            "schedule uses {} samples but only {n_train} are reserved for training",
            schedule.n_total
        )));
    }
    for level in &schedule.levels {
        if dataset.level_position(level).is_none() {
            return Err(Error::ResolutionMismatch(format!(
                "dataset has no level with R = {}",
                level.points_per_side
            )));
        }
    }
    Ok(test.collect())
}

fn should_eval(epoch: usize, total: usize, every: usize) -> bool {
    epoch == total || (every > 0 && epoch.is_multiple_of(every))
}

/// Multi-level training: plan an epoch, then one estimator gradient and one
/// optimizer step per batch; the test split is scored at the finest level.
pub fn train(
    dataset: &MultiResDataset,
    schedule: &LevelSchedule,
    model: &ModelConfig,
    optimizer: &OptimizerConfig,
    options: &TrainOptions,
    resume: Option<Resume>,
) -> Result<TrainReport> {
    let test = check_split(dataset, schedule)?;
    let finest = *dataset.finest();
    let (mut params, mut state, offset) = match resume {
        Some(r) => {
            if r.params.config != *model {
                return Err(Error::InvalidArgument("checkpoint model config differs".into()));
            }
            (r.params, r.state, r.epochs_done)
        }
        None => {
            let p = init_params(model, options.seed)?;
            let s = OptimizerState::new(*optimizer, p.len());
            (p, s, 0)
        }
    };
    let initial_test_loss = evaluate(&params, dataset, &test, &finest, options.exec)?;

    let mut epochs = Vec::with_capacity(options.epochs);
    for e in 1..=options.epochs {
        let start = Instant::now();
        let plan = plan_epoch(schedule, epoch_seed(options.seed, offset + e))?;
        let (mut total, mut coarse) = (0.0, 0.0);
        let mut pairs = vec![0.0; schedule.m() - 1];
        for batch in &plan.batches {
            let est = MlmcEstimator::new(&params, dataset, &schedule.levels)?;
            let (report, grad) = est.loss_and_grad(batch, options.exec)?;
            drop(est);
            state.step(&mut params, &grad)?;
            total += report.total;
            coarse += report.coarse_term;
            for (acc, p) in pairs.iter_mut().zip(&report.pair_terms) {
                *acc += p;
            }
        }
        let wall_s = start.elapsed().as_secs_f64();
        let k = plan.batches.len().max(1) as f64;
        let test_loss = if should_eval(e, options.epochs, options.eval_every) {
            Some(evaluate(&params, dataset, &test, &finest, options.exec)?)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch: offset + e,
            wall_s,
            steps: plan.batches.len(),
            mlmc_total: total / k,
            coarse_term: coarse / k,
            pair_terms: pairs.into_iter().map(|p| p / k).collect(),
            test_loss,
        });
        if !(total.is_finite() && test_loss.is_none_or(f64::is_finite)) {
            return Err(Error::NonFinite(format!("loss diverged in epoch {}", offset + e)));
        }
    }
    Ok(TrainReport {
        schedule: schedule.clone(),
        model: *model,
        optimizer: *optimizer,
        options: *options,
        initial_test_loss,
        epochs,
        final_params: params,
        final_state: state,
    })
}

/// Per-epoch record of the plain single-resolution trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainEpoch {
    pub wall_s: f64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Ordinary mini-batch training at one level over the first `n_train`
/// samples: shuffle, cut into blocks of `batch_size`, one step per block.
pub fn train_plain(
    dataset: &MultiResDataset,
    level: &ResolutionLevel,
    n_train: usize,
    batch_size: usize,
    model: &ModelConfig,
    optimizer: &OptimizerConfig,
    options: &TrainOptions,
) -> Result<(Vec<PlainEpoch>, ModelParams)> {
    let (max_train, test) = train_test_split(dataset.n_samples());
    if n_train > max_train || batch_size == 0 || batch_size > n_train {
        return Err(Error::InvalidArgument(format!(
            "cannot batch {n_train} samples by {batch_size}"
        )));
    }
    let test: Vec<usize> = test.collect();
    let pos = dataset
        .level_position(level)
        .ok_or_else(|| Error::ResolutionMismatch("level not in dataset".into()))?;
    let finest = *dataset.finest();
    let mut params = init_params(model, options.seed)?;
    let mut state = OptimizerState::new(*optimizer, params.len());
    let mut history = Vec::with_capacity(options.epochs);
    for e in 1..=options.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(options.seed, e));
        let mut perm: Vec<usize> = (0..n_train).collect();
        perm.shuffle(&mut rng);
        let mut sum = 0.0;
        let k = n_train / batch_size;
        for block in perm.chunks_exact(batch_size) {
            let mut idx = block.to_vec();
            idx.sort_unstable();
            let pairs = idx
                .iter()
                .map(|&j| dataset.pair(pos, j))
                .collect::<Result<Vec<_>>>()?;
            let (l, g) = loss_and_grad(&params, &pairs, options.exec)?;
            state.step(&mut params, &g)?;
            sum += l;
        }
        let wall_s = start.elapsed().as_secs_f64();
        let test_loss = if should_eval(e, options.epochs, options.eval_every) {
            Some(evaluate(&params, dataset, &test, &finest, options.exec)?)
        } else {
            None
        };
        history.push(PlainEpoch {
            wall_s,
            train_loss: sum / k as f64,
            test_loss,
        });
        if !sum.is_finite() {
            return Err(Error::NonFinite(format!("loss diverged in epoch {e}")));
        }
    }
    Ok((history, params))
}
