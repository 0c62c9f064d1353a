//! Gaussian random fields with covariance diagonal in the Neumann cosine basis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::multires::{GridField, ResolutionLevel};
use crate::{Error, Result};

/// Parameters of one GRF draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub resolution: ResolutionLevel,
    /// Shift `τ` added to the Laplacian eigenvalues.
    pub shift: f64,
    /// Exponent `s`: mode standard deviation is `(λ + τ)^(-s)`.
    pub exponent: f64,
    pub seed: u64,
}

impl GrfSpec {
    /// Darcy defaults: `τ = 9`, `s = 2`.
    pub fn darcy(resolution: ResolutionLevel, seed: u64) -> Self {
        Self {
            resolution,
            shift: 9.0,
            exponent: 2.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0 && self.exponent > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "GRF needs shift > 0 and exponent > 0, got τ = {}, s = {}",
                self.shift, self.exponent
            )));
        }
        Ok(())
    }

    /// Standard deviation of the coefficient of cosine mode `(j, k)`.
    pub fn mode_std(&self, j: usize, k: usize) -> f64 {
        let lambda = PI * PI * (j * j + k * k) as f64;
        (lambda + self.shift).powf(-self.exponent)
    }
}

/// `L²(0,1)`-orthonormal Neumann eigenfunction `φ_j` sampled at `R` nodes.
pub fn cosine_basis(points: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|j| {
            let c = if j == 0 { 1.0 } else { 2f64.sqrt() };
            (0..points).map(|n| c * (j as f64 * PI * n as f64 * h).cos()).collect()
        })
        .collect()
}

/// Draw `μ = Σ σ_jk ξ_jk φ_j(x) φ_k(y)` with `ξ_jk ~ N(0, 1)` i.i.d.
pub fn sample_grf(spec: &GrfSpec) -> Result<GridField> {
    spec.validate()?;
    let level = spec.resolution;
    let r = level.points_per_side;
    let basis = cosine_basis(r);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let values = match level.dim {
        1 => {
            let coeffs: Vec<f64> = (0..r)
                .map(|j| spec.mode_std(j, 0) * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            (0..r)
                .map(|n| (0..r).map(|j| coeffs[j] * basis[j][n]).sum())
                .collect()
        }
        _ => {
            // coeffs[j][k] row-major, then μ = Φᵀ C Φ evaluated in two passes.
            let coeffs: Vec<f64> = (0..r * r)
                .map(|jk| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.mode_std(jk / r, jk % r) * z
                })
                .collect();
            // tmp[j][m] = Σ_k C[j][k] φ_k(y_m)
            let mut tmp = vec![0.0; r * r];
            for j in 0..r {
                let out = &mut tmp[j * r..(j + 1) * r];
                for k in 0..r {
                    let c = coeffs[j * r + k];
                    for (o, b) in out.iter_mut().zip(&basis[k]) {
                        *o += c * b;
                    }
                }
            }
            // μ[n][m] = Σ_j φ_j(x_n) tmp[j][m]
            let mut mu = vec![0.0; r * r];
            for n in 0..r {
                let out = &mut mu[n * r..(n + 1) * r];
                for j in 0..r {
                    let b = basis[j][n];
                    for (o, t) in out.iter_mut().zip(&tmp[j * r..(j + 1) * r]) {
                        *o += b * t;
                    }
                }
            }
            mu
        }
    };
    GridField::new(level, values)
}

/// Piecewise-constant coefficient: 12 where `μ ≥ 0`, 3 elsewhere.
pub fn threshold_coefficient(mu: &GridField) -> GridField {
    mu.map(|v| if v >= 0.0 { 12.0 } else { 3.0 })
        .expect("thresholding a valid field yields finite values")
}
