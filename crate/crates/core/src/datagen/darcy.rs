//! Finite-difference solvers for `-∇·(a∇u) = f` with zero Dirichlet data.
//!
//! 2D uses the conservative 5-point stencil with arithmetic face averages and
//! Jacobi-preconditioned conjugate gradients; 1D uses a direct tridiagonal
//! solve.

use serde::{Deserialize, Serialize};

use crate::multires::GridField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop when `‖r‖ / ‖b‖ ≤ tol`.
    pub tol: f64,
    /// Iteration cap is `max_iter_factor · R`.
    pub max_iter_factor: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter_factor: 50,
        }
    }
}

/// Solve `-∇·(a∇u) = 1` on the unit square.
pub fn solve_darcy(a: &GridField, tol: f64) -> Result<GridField> {
    let rhs = GridField::constant(*a.level(), 1.0);
    solve_darcy_with_rhs(a, &rhs, &SolverSettings { tol, ..Default::default() })
}

fn check_coefficient(a: &GridField) -> Result<()> {
    if let Some(pos) = a.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion coefficient must be positive (node {pos} is {})",
            a.values()[pos]
        )));
    }
    Ok(())
}

/// Solve `-∇·(a∇u) = rhs`; boundary values of `rhs` are ignored.
pub fn solve_darcy_with_rhs(
    a: &GridField,
    rhs: &GridField,
    settings: &SolverSettings,
) -> Result<GridField> {
    if a.level() != rhs.level() {
        return Err(Error::ResolutionMismatch(
            "coefficient and right-hand side live on different grids".into(),
        ));
    }
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", settings.tol)));
    }
    check_coefficient(a)?;
    match a.level().dim {
        1 => solve_1d(a, rhs),
        _ => solve_2d(a, rhs, settings),
    }
}

struct Stencil {
    r: usize,
    /// Face coefficient between (i, j) and (i + 1, j), scaled by 1/h².
    east: Vec<f64>,
    /// Face coefficient between (i, j) and (i, j + 1), scaled by 1/h².
    north: Vec<f64>,
    diag: Vec<f64>,
}

impl Stencil {
    fn new(a: &GridField) -> Self {
        let r = a.level().points_per_side;
        let inv_h2 = 1.0 / (a.level().spacing() * a.level().spacing());
        let v = a.values();
        let mut east = vec![0.0; r * r];
        let mut north = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                let n = i * r + j;
                if i + 1 < r {
                    east[n] = 0.5 * (v[n] + v[n + r]) * inv_h2;
                }
                if j + 1 < r {
                    north[n] = 0.5 * (v[n] + v[n + 1]) * inv_h2;
                }
            }
        }
        let mut diag = vec![1.0; r * r];
        for i in 1..r - 1 {
            for j in 1..r - 1 {
                let n = i * r + j;
                diag[n] = east[n] + east[n - r] + north[n] + north[n - 1];
            }
        }
        Self { r, east, north, diag }
    }

    /// `out = A x` on interior nodes; boundary entries of `x` must be zero.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let r = self.r;
        for i in 1..r - 1 {
            for j in 1..r - 1 {
                let n = i * r + j;
                out[n] = self.diag[n] * x[n]
                    - self.east[n] * x[n + r]
                    - self.east[n - r] * x[n - r]
                    - self.north[n] * x[n + 1]
                    - self.north[n - 1] * x[n - 1];
            }
        }
    }
}

fn interior(r: usize) -> impl Iterator<Item = usize> {
    (1..r - 1).flat_map(move |i| (1..r - 1).map(move |j| i * r + j))
}

fn solve_2d(a: &GridField, rhs: &GridField, settings: &SolverSettings) -> Result<GridField> {
    let level = *a.level();
    let r = level.points_per_side;
    let stencil = Stencil::new(a);
    let dot = |x: &[f64], y: &[f64]| interior(r).map(|n| x[n] * y[n]).sum::<f64>();

    let mut u = vec![0.0; r * r];
    let mut res = vec![0.0; r * r];
    for n in interior(r) {
        res[n] = rhs.values()[n];
    }
    let b_norm = dot(&res, &res).sqrt();
    if b_norm == 0.0 {
        return GridField::new(level, u);
    }
    let mut z: Vec<f64> = res.iter().zip(&stencil.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; r * r];
    let mut rz = dot(&res, &z);
    let max_iter = settings.max_iter_factor * r;

    for _ in 0..max_iter {
        stencil.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for n in interior(r) {
            u[n] += alpha * p[n];
            res[n] -= alpha * ap[n];
        }
        if dot(&res, &res).sqrt() <= settings.tol * b_norm {
            return GridField::new(level, u);
        }
        for n in interior(r) {
            z[n] = res[n] / stencil.diag[n];
        }
        let rz_next = dot(&res, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for n in interior(r) {
            p[n] = z[n] + beta * p[n];
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: dot(&res, &res).sqrt() / b_norm,
    })
}

/// Thomas algorithm for the 1D three-point scheme.
fn solve_1d(a: &GridField, rhs: &GridField) -> Result<GridField> {
    let level = *a.level();
    let r = level.points_per_side;
    let inv_h2 = 1.0 / (level.spacing() * level.spacing());
    let v = a.values();
    let face: Vec<f64> = (0..r - 1).map(|i| 0.5 * (v[i] + v[i + 1]) * inv_h2).collect();

    // Unknowns are nodes 1..r-1; row k couples node k to k-1 and k+1.
    let n = r - 2;
    let mut u = vec![0.0; r];
    if n == 0 {
        return GridField::new(level, u);
    }
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for k in 0..n {
        let node = k + 1;
        let diag = face[node - 1] + face[node];
        let lower = if k > 0 { -face[node - 1] } else { 0.0 };
        let upper = -face[node];
        let denom = diag - lower * if k > 0 { c_prime[k - 1] } else { 0.0 };
        c_prime[k] = upper / denom;
        let prev = if k > 0 { d_prime[k - 1] } else { 0.0 };
        d_prime[k] = (rhs.values()[node] - lower * prev) / denom;
    }
    u[n] = d_prime[n - 1];
    for k in (0..n - 1).rev() {
        u[k + 1] = d_prime[k] - c_prime[k] * u[k + 2];
    }
    GridField::new(level, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multires::{build_hierarchy, build_hierarchy_nd, grid_norm_sq};
    use std::f64::consts::PI;

    /// Truncated double-sine series for `-Δu = 1`, zero Dirichlet.
    fn poisson_series(x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        for j in (1..400).step_by(2) {
            for k in (1..400).step_by(2) {
                let (jf, kf) = (j as f64, k as f64);
                sum += 16.0 / (PI.powi(4) * jf * kf * (jf * jf + kf * kf))
                    * (jf * PI * x).sin()
                    * (kf * PI * y).sin();
            }
        }
        sum
    }

    #[test]
    fn unit_coefficient_center_value() {
        let level = build_hierarchy(65, 1).unwrap()[0];
        let u = solve_darcy(&GridField::constant(level, 1.0), 1e-10).unwrap();
        let center = u.values()[32 * 65 + 32];
        let oracle = poisson_series(0.5, 0.5);
        assert!((oracle - 0.07367).abs() < 1e-4, "oracle {oracle}");
        assert!((center - oracle).abs() < 1e-3, "center {center} vs {oracle}");
    }

    #[test]
    fn unit_coefficient_solution_is_nonnegative() {
        let level = build_hierarchy(33, 1).unwrap()[0];
        let u = solve_darcy(&GridField::constant(level, 1.0), 1e-10).unwrap();
        assert!(u.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let level = build_hierarchy(17, 1).unwrap()[0];
        let a = GridField::from_fn(level, |x, y| 1.0 + x * y).unwrap();
        let u = solve_darcy_with_rhs(&a, &GridField::zeros(level), &SolverSettings::default())
            .unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_nonpositive_coefficient() {
        let level = build_hierarchy(9, 1).unwrap()[0];
        assert!(solve_darcy(&GridField::zeros(level), 1e-8).is_err());
        assert!(solve_darcy(&GridField::constant(level, 1.0), 0.0).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let level = build_hierarchy(33, 1).unwrap()[0];
        let a = GridField::constant(level, 1.0);
        let settings = SolverSettings { tol: 1e-14, max_iter_factor: 0 };
        let err = solve_darcy_with_rhs(&a, &GridField::constant(level, 1.0), &settings);
        assert!(matches!(err, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn manufactured_solution_second_order() {
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let errors: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&r| {
                let level = build_hierarchy(r, 1).unwrap()[0];
                let a = GridField::constant(level, 1.0);
                let f = GridField::from_fn(level, |x, y| 2.0 * PI * PI * exact(x, y)).unwrap();
                let u = solve_darcy_with_rhs(&a, &f, &SolverSettings::default()).unwrap();
                let truth = GridField::from_fn(level, exact).unwrap();
                let diff = GridField::new(
                    level,
                    u.values().iter().zip(truth.values()).map(|(a, b)| a - b).collect(),
                )
                .unwrap();
                grid_norm_sq(&diff).sqrt()
            })
            .collect();
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn one_dimensional_unit_coefficient() {
        let level = build_hierarchy_nd(1025, 1, 1).unwrap()[0];
        let u = solve_darcy(&GridField::constant(level, 1.0), 1e-10).unwrap();
        assert!((u.values()[512] - 0.125).abs() < 1e-6);
        // Quadratic solutions are reproduced exactly by the three-point scheme.
        for (i, v) in u.values().iter().enumerate() {
            let x = level.coord(i);
            assert!((v - 0.5 * x * (1.0 - x)).abs() < 1e-10);
        }
    }
}
