//! Multi-resolution datasets.
//!
//! Every sample is generated once on the finest grid and injected onto all
//! coarser levels, so the copies of one sample at different levels agree on
//! every coincident node.

mod darcy;
mod grf;
mod io;

pub use darcy::{solve_darcy, solve_darcy_with_rhs, SolverSettings};
pub use grf::{cosine_basis, sample_grf, threshold_coefficient, GrfSpec};
pub use io::{load_dataset, metadata_path, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::multires::{GridField, ResolutionLevel};
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Darcy,
    Synthetic1d,
}

/// How a dataset was produced; written to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: DatasetKind,
    pub seed: u64,
    pub grf_shift: Option<f64>,
    pub grf_exponent: Option<f64>,
    pub solver: Option<SolverSettings>,
}

/// `N` input/output pairs stored at every level of a nested hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResDataset {
    pub hierarchy: Vec<ResolutionLevel>,
    /// `inputs[level][sample]`, coarsest level first.
    pub inputs: Vec<Vec<GridField>>,
    pub outputs: Vec<Vec<GridField>>,
    pub provenance: Provenance,
}

impl MultiResDataset {
    /// Assemble from finest-level pairs by restricting to every level.
    pub fn from_finest(
        hierarchy: Vec<ResolutionLevel>,
        pairs: Vec<(GridField, GridField)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let finest = *hierarchy
            .last()
            .ok_or_else(|| Error::InvalidHierarchy("empty hierarchy".into()))?;
        let mut inputs = vec![Vec::with_capacity(pairs.len()); hierarchy.len()];
        let mut outputs = vec![Vec::with_capacity(pairs.len()); hierarchy.len()];
        for (a, u) in pairs {
            if *a.level() != finest || *u.level() != finest {
                return Err(Error::ResolutionMismatch(
                    "samples must be given at the finest level".into(),
                ));
            }
            for (pos, level) in hierarchy.iter().enumerate() {
                inputs[pos].push(a.restrict(level)?);
                outputs[pos].push(u.restrict(level)?);
            }
        }
        Ok(Self {
            hierarchy,
            inputs,
            outputs,
            provenance,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_levels(&self) -> usize {
        self.hierarchy.len()
    }

    pub fn dim(&self) -> usize {
        self.hierarchy[0].dim
    }

    pub fn finest(&self) -> &ResolutionLevel {
        self.hierarchy.last().expect("non-empty hierarchy")
    }

    /// Position in `hierarchy` of the level with the same resolution.
    pub fn level_position(&self, level: &ResolutionLevel) -> Option<usize> {
        self.hierarchy
            .iter()
            .position(|l| l.points_per_side == level.points_per_side && l.dim == level.dim)
    }

    /// Input/output pair of sample `j` at hierarchy position `pos`.
    pub fn pair(&self, pos: usize, j: usize) -> Result<(&GridField, &GridField)> {
        let len = self.n_samples();
        match (self.inputs.get(pos), self.outputs.get(pos)) {
            (Some(a), Some(u)) if j < len => Ok((&a[j], &u[j])),
            (Some(_), Some(_)) => Err(Error::IndexOutOfRange {
                level: pos + 1,
                index: j,
                len,
            }),
            _ => Err(Error::ResolutionMismatch(format!("no level at position {pos}"))),
        }
    }

    /// Verify that every coarse copy is the injection of the finest copy.
    pub fn check_nesting(&self) -> Result<()> {
        let top = self.n_levels() - 1;
        for j in 0..self.n_samples() {
            for pos in 0..top {
                let level = &self.hierarchy[pos];
                if self.inputs[top][j].restrict(level)? != self.inputs[pos][j]
                    || self.outputs[top][j].restrict(level)? != self.outputs[pos][j]
                {
                    return Err(Error::InvalidField(format!(
                        "sample {j} at level {} is not the restriction of the finest copy",
                        pos + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-sample seed, independent of generation order and worker count.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

/// Darcy dataset: GRF → threshold → solve on the finest grid → restrict.
///
/// `grf` supplies `τ` and `s`; its resolution and seed are replaced per sample.
pub fn build_dataset(
    n: usize,
    hierarchy: &[ResolutionLevel],
    grf: &GrfSpec,
    solver: &SolverSettings,
    seed: u64,
    exec: Execution,
) -> Result<MultiResDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    let finest = *hierarchy
        .last()
        .ok_or_else(|| Error::InvalidHierarchy("empty hierarchy".into()))?;
    let indices: Vec<usize> = (0..n).collect();
    let pairs = exec
        .map(&indices, |&j| {
            let spec = GrfSpec {
                resolution: finest,
                seed: sample_seed(seed, j),
                ..*grf
            };
            let a = threshold_coefficient(&sample_grf(&spec)?);
            let rhs = GridField::constant(finest, 1.0);
            let u = solve_darcy_with_rhs(&a, &rhs, solver)?;
            Ok((a, u))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    MultiResDataset::from_finest(
        hierarchy.to_vec(),
        pairs,
        Provenance {
            kind: DatasetKind::Darcy,
            seed,
            grf_shift: Some(grf.shift),
            grf_exponent: Some(grf.exponent),
            solver: Some(*solver),
        },
    )
}

/// Smooth positive 1D coefficient `a(x) = exp(½ Σ_{k≤4} ξ_k cos(kπx) / k)`.
pub fn synthetic_coefficient(level: ResolutionLevel, seed: u64) -> Result<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
    GridField::from_fn(level, |x, _| {
        let s: f64 = xi
            .iter()
            .enumerate()
            .map(|(k, z)| z * ((k + 1) as f64 * std::f64::consts::PI * x).cos() / (k + 1) as f64)
            .sum();
        (0.5 * s).exp()
    })
}

/// Fast 1D fixture: `-(a u')' = 1`, zero Dirichlet, direct solve.
pub fn synthetic1d_dataset(
    n: usize,
    hierarchy: &[ResolutionLevel],
    seed: u64,
) -> Result<MultiResDataset> {
    let finest = *hierarchy
        .last()
        .ok_or_else(|| Error::InvalidHierarchy("empty hierarchy".into()))?;
    if finest.dim != 1 {
        return Err(Error::InvalidHierarchy("synthetic dataset is one-dimensional".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    let pairs = (0..n)
        .map(|j| {
            let a = synthetic_coefficient(finest, sample_seed(seed, j))?;
            let u = solve_darcy(&a, 1e-12)?;
            Ok((a, u))
        })
        .collect::<Result<Vec<_>>>()?;
    MultiResDataset::from_finest(
        hierarchy.to_vec(),
        pairs,
        Provenance {
            kind: DatasetKind::Synthetic1d,
            seed,
            grf_shift: None,
            grf_exponent: None,
            solver: None,
        },
    )
}
