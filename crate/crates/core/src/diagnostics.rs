//! Checks on the estimator: gradient quality, variance decay across levels,
//! the telescoping identity and finite-difference gradient agreement.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::batcher::Batch;
use crate::datagen::MultiResDataset;
use crate::mlmc::{level_difference_variance, mlmc_loss, MlmcEstimator};
use crate::model::{loss_and_grad, GradVector, ModelParams};
use crate::multires::ResolutionLevel;
use crate::{Error, Execution, Result};

/// Euclidean norms of the fine, coarse and multi-level gradients of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradComparison {
    pub fine_norm: f64,
    pub coarse_norm: f64,
    pub mlmc_norm: f64,
    pub mlmc_error: f64,
    pub coarse_error: f64,
}

fn plain_grad(
    params: &ModelParams,
    dataset: &MultiResDataset,
    level: &ResolutionLevel,
    set: &[usize],
    exec: Execution,
) -> Result<GradVector> {
    let pos = dataset
        .level_position(level)
        .ok_or_else(|| Error::ResolutionMismatch("level not in dataset".into()))?;
    let pairs = set
        .iter()
        .map(|&j| dataset.pair(pos, j))
        .collect::<Result<Vec<_>>>()?;
    loss_and_grad(params, &pairs, exec).map(|(_, g)| g)
}

/// Compare the multi-level gradient of `batch` against the single-level
/// gradients over its level-1 set at the finest and coarsest levels.
///
/// Every deeper set must be drawn from the level-1 set.
pub fn gradient_comparison(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    batch: &Batch,
    exec: Execution,
) -> Result<GradComparison> {
    let base = batch
        .sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("batch has no index sets".into()))?;
    if batch.sets.iter().flatten().any(|j| !base.contains(j)) {
        return Err(Error::InvalidArgument(
            "deeper index sets must be subsets of the level-1 set".into(),
        ));
    }
    let fine = plain_grad(params, dataset, levels.last().unwrap(), base, exec)?;
    let coarse = plain_grad(params, dataset, &levels[0], base, exec)?;
    let (_, mlmc) = MlmcEstimator::new(params, dataset, levels)?.loss_and_grad(batch, exec)?;
    Ok(GradComparison {
        fine_norm: fine.norm(),
        coarse_norm: coarse.norm(),
        mlmc_norm: mlmc.norm(),
        mlmc_error: mlmc.sub(&fine).norm(),
        coarse_error: coarse.sub(&fine).norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    /// `(i, Var_i)` for `i = 2..=m`.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of `log₂ Var_i` against `i`; needs two points.
    pub slope: Option<f64>,
}

impl VarianceProfile {
    pub fn is_strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,variance,slope\n");
        let slope = self.slope.map_or(String::new(), |s| s.to_string());
        for (i, v) in &self.points {
            let _ = writeln!(out, "{i},{v},{slope}");
        }
        out
    }
}

pub fn variance_decay_profile(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    n_probe: usize,
    exec: Execution,
) -> Result<VarianceProfile> {
    let points = (2..=levels.len())
        .map(|i| level_difference_variance(params, dataset, levels, i, n_probe, exec).map(|v| (i, v)))
        .collect::<Result<Vec<_>>>()?;
    let slope = (points.len() >= 2).then(|| {
        let xs: Vec<f64> = points.iter().map(|(i, _)| *i as f64).collect();
        let ys: Vec<f64> = points.iter().map(|(_, v)| v.log2()).collect();
        least_squares_slope(&xs, &ys)
    });
    Ok(VarianceProfile { points, slope })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `|L_mlmc(S, …, S) − L_fine(S)| / |L_fine(S)|`.
pub fn telescoping_audit(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    set: &[usize],
    exec: Execution,
) -> Result<f64> {
    let batch = Batch {
        sets: vec![set.to_vec(); levels.len()],
    };
    let report = mlmc_loss(params, dataset, levels, &batch, exec)?;
    let pos = dataset
        .level_position(levels.last().unwrap())
        .ok_or_else(|| Error::ResolutionMismatch("level not in dataset".into()))?;
    let pairs = set
        .iter()
        .map(|&j| dataset.pair(pos, j))
        .collect::<Result<Vec<_>>>()?;
    let (fine, _) = loss_and_grad(params, &pairs, exec)?;
    Ok((report.total - fine).abs() / fine.abs())
}

/// Worst component error between the analytic estimator gradient and central
/// differences of its loss. Components whose scale is below `1e-12` are
/// compared absolutely.
pub fn fd_gradient_check(
    params: &ModelParams,
    dataset: &MultiResDataset,
    levels: &[ResolutionLevel],
    batch: &Batch,
    epsilon: f64,
    exec: Execution,
) -> Result<f64> {
    let (_, analytic) = MlmcEstimator::new(params, dataset, levels)?.loss_and_grad(batch, exec)?;
    let at = |values: Vec<f64>| -> Result<f64> {
        let p = ModelParams {
            config: params.config,
            values,
        };
        Ok(mlmc_loss(&p, dataset, levels, batch, exec)?.total)
    };
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.0.iter().enumerate() {
        let mut plus = params.values.clone();
        plus[i] += epsilon;
        let mut minus = params.values.clone();
        minus[i] -= epsilon;
        let fd = (at(plus)? - at(minus)?) / (2.0 * epsilon);
        worst = worst.max(relative_error(*g, fd));
    }
    Ok(worst)
}

/// `|a − b| / max(|a|, |b|)`, or `|a − b|` when that scale is below `1e-12`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    let err = (a - b).abs();
    if scale < 1e-12 {
        err
    } else {
        err / scale
    }
}

pub fn grad_compare_csv(rows: &[GradComparison]) -> String {
    let mut out =
        String::from("batch,fine_norm,coarse_norm,mlmc_norm,mlmc_error,coarse_error\n");
    for (k, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            r.fine_norm, r.coarse_norm, r.mlmc_norm, r.mlmc_error, r.coarse_error
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synthetic1d_dataset;
    use crate::model::{init_params, ModelConfig};
    use crate::multires::build_hierarchy_nd;

    fn fixture(m: usize) -> (MultiResDataset, ModelParams) {
        let ds = synthetic1d_dataset(10, &build_hierarchy_nd(65, m, 1).unwrap(), 4).unwrap();
        let cfg = ModelConfig { dim: 1, width: 2, modes: 2, layers: 2, ..Default::default() };
        (ds, init_params(&cfg, 1).unwrap())
    }

    #[test]
    fn identical_sets_certify_telescoping() {
        let (ds, params) = fixture(3);
        let batch = Batch { sets: vec![vec![0, 3, 4]; 3] };
        let c = gradient_comparison(&params, &ds, &ds.hierarchy, &batch, Execution::Parallel)
            .unwrap();
        assert!(c.mlmc_error < 1e-10 * c.fine_norm);
        assert!(c.coarse_error.is_finite() && c.coarse_norm > 0.0);
        assert!(telescoping_audit(&params, &ds, &ds.hierarchy, &[2], Execution::Sequential).unwrap() < 1e-12);
    }

    #[test]
    fn comparison_rejects_foreign_indices() {
        let (ds, params) = fixture(2);
        let batch = Batch { sets: vec![vec![0, 1], vec![5]] };
        assert!(gradient_comparison(&params, &ds, &ds.hierarchy, &batch, Execution::Sequential).is_err());
    }

    #[test]
    fn profile_with_two_levels_has_no_slope() {
        let (ds, params) = fixture(2);
        let p = variance_decay_profile(&params, &ds, &ds.hierarchy, 4, Execution::Sequential).unwrap();
        assert_eq!(p.points.len(), 1);
        assert!(p.slope.is_none());
        assert!(p.to_csv().starts_with("level,variance,slope\n2,"));
        assert!(variance_decay_profile(&params, &ds, &ds.hierarchy, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn slope_fit() {
        let xs = [2.0, 3.0, 4.0];
        assert!((least_squares_slope(&xs, &[1.0, -1.0, -3.0]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_order_is_visible() {
        let (ds, params) = fixture(2);
        let batch = Batch { sets: vec![vec![1, 2], vec![2]] };
        let fine = fd_gradient_check(&params, &ds, &ds.hierarchy, &batch, 1e-5, Execution::Sequential)
            .unwrap();
        let coarse = fd_gradient_check(&params, &ds, &ds.hierarchy, &batch, 1e-2, Execution::Sequential)
            .unwrap();
        assert!(fine < 1e-6, "{fine:e}");
        assert!(coarse > fine);
    }

    #[test]
    fn relative_error_switches_to_absolute() {
        assert_eq!(relative_error(0.0, 1e-13), 1e-13);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
