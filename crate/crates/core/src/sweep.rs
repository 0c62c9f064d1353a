//! Baseline-versus-multi-level sweeps over `(m, δ)`.
//!
//! Every run shares the model seed. Baselines train at a single dataset
//! level with plain mini-batching; multi-level runs use the finest `m`
//! levels with geometric allocation. All runs are scored on the test split
//! at the finest level.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::MultiResDataset;
use crate::mlmc::{LevelSchedule, SamplingStrategy};
use crate::model::ModelConfig;
use crate::optim::{train, train_test_split, OptimizerConfig, TrainOptions, TrainReport};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub deltas: Vec<f64>,
    /// `B_m` of the multi-level runs.
    pub finest_batch: usize,
    /// Batch size of the single-level baselines. The default matches the
    /// level-1 batch of the δ = 8, m = 3 schedule, so step counts agree.
    pub baseline_batch: usize,
    pub sampling: SamplingStrategy,
    pub baselines: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_values: vec![2, 3],
            deltas: vec![8.0, 4.0, 2.0, 1.5, 1.0],
            finest_batch: 1,
            baseline_batch: 64,
            sampling: SamplingStrategy::Random,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Baseline,
    Mlmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub kind: RunKind,
    pub m: usize,
    pub delta: f64,
    pub strategy: SamplingStrategy,
    /// Points per side of the (finest) training level.
    pub resolution: usize,
    pub steps_per_epoch: usize,
    pub mean_epoch_wall_s: f64,
    pub final_test_loss: f64,
    pub params_seed: u64,
}

impl SweepRow {
    fn from_report(run_id: String, kind: RunKind, report: &TrainReport) -> Self {
        let s = &report.schedule;
        Self {
            run_id,
            kind,
            m: s.m(),
            delta: s.delta,
            strategy: s.sampling,
            resolution: s.levels.last().map_or(0, |l| l.points_per_side),
            steps_per_epoch: report.epochs.first().map_or(0, |e| e.steps),
            mean_epoch_wall_s: report.median_epoch_wall_s(),
            final_test_loss: report.final_test_loss(),
            params_seed: report.options.seed,
        }
    }
}

fn strategy_name(s: SamplingStrategy) -> &'static str {
    match s {
        SamplingStrategy::Random => "random",
        SamplingStrategy::Nested => "nested",
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "run_id,kind,m,delta,strategy,resolution,steps_per_epoch,mean_epoch_wall_s,final_test_loss,params_seed\n",
    );
    for r in rows {
        let kind = match r.kind {
            RunKind::Baseline => "baseline",
            RunKind::Mlmc => "mlmc",
        };
        let _ = writeln!(
            out,
            "{},{kind},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.m,
            r.delta,
            strategy_name(r.strategy),
            r.resolution,
            r.steps_per_epoch,
            r.mean_epoch_wall_s,
            r.final_test_loss,
            r.params_seed
        );
    }
    out
}

/// Run every baseline (one per dataset level, coarsest first) and every
/// `(m, δ)` combination, in that order, calling `on_row` after each run.
pub fn run_sweep(
    dataset: &MultiResDataset,
    sweep: &SweepConfig,
    model: &ModelConfig,
    optimizer: &OptimizerConfig,
    options: &TrainOptions,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let (n_train, _) = train_test_split(dataset.n_samples());
    let mut rows = Vec::new();
    if sweep.baselines {
        for level in &dataset.hierarchy {
            let schedule = LevelSchedule::single(*level, n_train, sweep.baseline_batch)?;
            let report = train(dataset, &schedule, model, optimizer, options, None)?;
            let row = SweepRow::from_report(
                format!("baseline-R{}", level.points_per_side),
                RunKind::Baseline,
                &report,
            );
            on_row(&row);
            rows.push(row);
        }
    }
    for &m in &sweep.m_values {
        if m == 0 || m > dataset.n_levels() {
            return Err(Error::InvalidArgument(format!(
                "m = {m} but the dataset has {} levels",
                dataset.n_levels()
            )));
        }
        let levels = dataset.hierarchy[dataset.n_levels() - m..].to_vec();
        for &delta in &sweep.deltas {
            let schedule =
                LevelSchedule::geometric(levels.clone(), n_train, delta, sweep.finest_batch, sweep.sampling)?;
            let report = train(dataset, &schedule, model, optimizer, options, None)?;
            let row = SweepRow::from_report(format!("mlmc-m{m}-d{delta}"), RunKind::Mlmc, &report);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
