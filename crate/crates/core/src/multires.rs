//! Nested uniform grids on the unit cube and node-valued fields on them.
//!
//! Level `i` (1 = coarsest) has `R_i = (R_m - 1) / 2^(m-i) + 1` nodes per
//! side, so every coarse node coincides with a fine node and restriction is
//! plain injection.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One rung of a nested resolution hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolutionLevel {
    /// 1-based level index, 1 = coarsest.
    pub index: usize,
    pub points_per_side: usize,
    /// Spatial dimension (1 or 2).
    pub dim: usize,
}

impl ResolutionLevel {
    /// Grid spacing `h = 1 / (R - 1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.points_per_side - 1) as f64
    }

    /// Number of nodes, `R^d`.
    pub fn len(&self) -> usize {
        self.points_per_side.pow(self.dim as u32)
    }

    /// Always false for a valid level; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node coordinate along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Injection stride from `self` down to `coarse`, if the grids nest.
    pub fn stride_to(&self, coarse: &ResolutionLevel) -> Option<usize> {
        if self.dim != coarse.dim || coarse.points_per_side < 2 {
            return None;
        }
        let (fine, coarse) = (self.points_per_side - 1, coarse.points_per_side - 1);
        if coarse > fine || fine % coarse != 0 {
            return None;
        }
        let stride = fine / coarse;
        stride.is_power_of_two().then_some(stride)
    }
}

/// Build an `m`-level 2D hierarchy whose finest level has `fine_points_per_side`
/// nodes per side. Levels are returned coarsest first.
pub fn build_hierarchy(fine_points_per_side: usize, m: usize) -> Result<Vec<ResolutionLevel>> {
    build_hierarchy_nd(fine_points_per_side, m, 2)
}

/// [`build_hierarchy`] for an arbitrary spatial dimension (1 or 2).
pub fn build_hierarchy_nd(
    fine_points_per_side: usize,
    m: usize,
    dim: usize,
) -> Result<Vec<ResolutionLevel>> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidHierarchy(format!("dimension {dim} not supported")));
    }
    if m == 0 {
        return Err(Error::InvalidHierarchy("need at least one level".into()));
    }
    let cells = fine_points_per_side.saturating_sub(1);
    if cells < 2 || !cells.is_power_of_two() {
        return Err(Error::InvalidHierarchy(format!(
            "{fine_points_per_side} points per side is not of the form 2^p + 1"
        )));
    }
    let p = cells.trailing_zeros() as usize;
    if p < m {
        return Err(Error::InvalidHierarchy(format!(
            "{m} levels below R = {fine_points_per_side} would leave fewer than 3 points per side"
        )));
    }
    Ok((1..=m)
        .map(|index| ResolutionLevel {
            index,
            points_per_side: (cells >> (m - index)) + 1,
            dim,
        })
        .collect())
}

/// A scalar field sampled at the nodes of one level, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    level: ResolutionLevel,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(level: ResolutionLevel, values: Vec<f64>) -> Result<Self> {
        if values.len() != level.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values for R = {} in {}D, got {}",
                level.len(),
                level.points_per_side,
                level.dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {pos}")));
        }
        Ok(Self { level, values })
    }

    pub fn zeros(level: ResolutionLevel) -> Self {
        Self::constant(level, 0.0)
    }

    pub fn constant(level: ResolutionLevel, value: f64) -> Self {
        Self {
            level,
            values: vec![value; level.len()],
        }
    }

    /// Sample `f(x, y)` at the nodes; in 1D `y` is always 0.
    pub fn from_fn(level: ResolutionLevel, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let r = level.points_per_side;
        let values = match level.dim {
            1 => (0..r).map(|i| f(level.coord(i), 0.0)).collect(),
            _ => (0..r * r)
                .map(|n| f(level.coord(n / r), level.coord(n % r)))
                .collect(),
        };
        Self::new(level, values)
    }

    pub fn level(&self) -> &ResolutionLevel {
        &self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Pointwise map; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.level, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Injection onto a coarser (or equal) nested level.
    pub fn restrict(&self, target: &ResolutionLevel) -> Result<Self> {
        restrict(self, target)
    }
}

/// Injection restriction: keep every `2^(Δi)`-th node along each axis.
pub fn restrict(field: &GridField, target: &ResolutionLevel) -> Result<GridField> {
    let src = field.level;
    if target.points_per_side > src.points_per_side {
        return Err(Error::ResolutionMismatch(format!(
            "cannot restrict R = {} to finer R = {}",
            src.points_per_side, target.points_per_side
        )));
    }
    let stride = src.stride_to(target).ok_or_else(|| {
        Error::ResolutionMismatch(format!(
            "R = {} and R = {} ({}D vs {}D) are not nested",
            src.points_per_side, target.points_per_side, src.dim, target.dim
        ))
    })?;
    let (rs, rt) = (src.points_per_side, target.points_per_side);
    let values = match src.dim {
        1 => (0..rt).map(|i| field.values[i * stride]).collect(),
        _ => {
            let mut out = Vec::with_capacity(rt * rt);
            for i in 0..rt {
                let row = &field.values[i * stride * rs..(i * stride + 1) * rs];
                out.extend(row.iter().step_by(stride));
            }
            out
        }
    };
    Ok(GridField {
        level: *target,
        values,
    })
}

/// Discrete squared L² norm `h^d Σ v²`.
pub fn grid_norm_sq(field: &GridField) -> f64 {
    let h = field.level.spacing();
    h.powi(field.level.dim as i32) * field.values.iter().map(|v| v * v).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn resolutions(levels: &[ResolutionLevel]) -> Vec<usize> {
        levels.iter().map(|l| l.points_per_side).collect()
    }

    fn random_field(level: ResolutionLevel, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::new(level, (0..level.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn hierarchy_resolutions() {
        assert_eq!(resolutions(&build_hierarchy(65, 3).unwrap()), [17, 33, 65]);
        assert_eq!(
            resolutions(&build_hierarchy(257, 5).unwrap()),
            [17, 33, 65, 129, 257]
        );
        assert_eq!(resolutions(&build_hierarchy(9, 1).unwrap()), [9]);
        assert!(build_hierarchy(241, 5).is_err());
        assert!(build_hierarchy(64, 2).is_err());
        // 9 = 2^3 + 1 supports at most 3 levels (R_1 = 3).
        assert_eq!(resolutions(&build_hierarchy(9, 3).unwrap()), [3, 5, 9]);
        assert!(build_hierarchy(9, 4).is_err());
        assert!(build_hierarchy(9, 0).is_err());
    }

    #[test]
    fn spacing_halves_between_levels() {
        let levels = build_hierarchy(129, 4).unwrap();
        for w in levels.windows(2) {
            assert_eq!(w[0].spacing(), 2.0 * w[1].spacing());
            assert_eq!(w[1].index, w[0].index + 1);
        }
    }

    #[test]
    fn restrict_preserves_constants_and_nodal_values() {
        let levels = build_hierarchy(65, 3).unwrap();
        let c = GridField::constant(levels[2], 3.25);
        assert_eq!(c.restrict(&levels[0]).unwrap(), GridField::constant(levels[0], 3.25));

        let levels = build_hierarchy(33, 2).unwrap();
        let ramp = GridField::from_fn(levels[1], |x, _| x).unwrap();
        let coarse = ramp.restrict(&levels[0]).unwrap();
        assert_eq!(coarse, GridField::from_fn(levels[0], |x, _| x).unwrap());
    }

    #[test]
    fn restrict_to_same_level_is_identity() {
        let levels = build_hierarchy(33, 2).unwrap();
        let f = random_field(levels[1], 1);
        assert_eq!(f.restrict(&levels[1]).unwrap(), f);
    }

    #[test]
    fn restrict_composes() {
        let levels = build_hierarchy(65, 3).unwrap();
        let f = random_field(levels[2], 7);
        let two_step = f.restrict(&levels[1]).unwrap().restrict(&levels[0]).unwrap();
        assert_eq!(two_step, f.restrict(&levels[0]).unwrap());
    }

    #[test]
    fn restrict_rejects_finer_and_non_nested_targets() {
        let levels = build_hierarchy(33, 2).unwrap();
        let coarse = random_field(levels[0], 2);
        assert!(coarse.restrict(&levels[1]).is_err());
        let odd = ResolutionLevel { index: 1, points_per_side: 13, dim: 2 };
        assert!(random_field(levels[1], 3).restrict(&odd).is_err());
        let one_d = ResolutionLevel { index: 1, points_per_side: 17, dim: 1 };
        assert!(random_field(levels[1], 3).restrict(&one_d).is_err());
    }

    #[test]
    fn field_validation() {
        let level = build_hierarchy(9, 1).unwrap()[0];
        assert!(GridField::new(level, vec![0.0; 80]).is_err());
        let mut v = vec![0.0; 81];
        v[5] = f64::NAN;
        assert!(GridField::new(level, v).is_err());
    }

    #[test]
    fn norm_closed_forms() {
        let level = build_hierarchy(3, 1).unwrap()[0];
        assert_eq!(grid_norm_sq(&GridField::constant(level, 1.0)), 9.0 / 4.0);
        assert_eq!(grid_norm_sq(&GridField::zeros(level)), 0.0);

        let line = build_hierarchy_nd(257, 1, 1).unwrap()[0];
        let s = GridField::from_fn(line, |x, _| (std::f64::consts::PI * x).sin()).unwrap();
        assert!((grid_norm_sq(&s) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn norm_of_restricted_smooth_field_converges_at_second_order() {
        // The field vanishes on the boundary, so the node sum is a trapezoid
        // rule and the error decays at least like h².
        let levels = build_hierarchy(257, 4).unwrap();
        let f = GridField::from_fn(levels[3], |x, y| {
            (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() * (1.0 + x * y)
        })
        .unwrap();
        let norms: Vec<f64> = levels[..3]
            .iter()
            .chain(std::iter::once(&levels[3]))
            .map(|l| grid_norm_sq(&f.restrict(l).unwrap()))
            .collect();
        let e0 = (norms[0] - norms[1]).abs();
        let e1 = (norms[1] - norms[2]).abs();
        let e2 = (norms[2] - norms[3]).abs();
        for ratio in [e0 / e1, e1 / e2] {
            assert!(ratio > 3.5, "ratio {ratio}");
        }
    }

    proptest! {
        #[test]
        fn restriction_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let levels = build_hierarchy(17, 3).unwrap();
            let f = random_field(levels[2], seed);
            let g = random_field(levels[2], seed.wrapping_add(1));
            let combo = GridField::new(
                levels[2],
                f.values().iter().zip(g.values()).map(|(a, b)| alpha * a + beta * b).collect(),
            ).unwrap();
            let lhs = combo.restrict(&levels[0]).unwrap();
            let (rf, rg) = (f.restrict(&levels[0]).unwrap(), g.restrict(&levels[0]).unwrap());
            for ((l, a), b) in lhs.values().iter().zip(rf.values()).zip(rg.values()) {
                prop_assert_eq!(*l, alpha * a + beta * b);
            }
        }

        #[test]
        fn nesting_commutes(seed in any::<u64>(), i in 0usize..3, j in 0usize..3) {
            let (i, j) = (i.min(j), i.max(j));
            let levels = build_hierarchy(33, 3).unwrap();
            let f = random_field(levels[2], seed);
            let via = f.restrict(&levels[j]).unwrap().restrict(&levels[i]).unwrap();
            prop_assert_eq!(via, f.restrict(&levels[i]).unwrap());
        }
    }
}
