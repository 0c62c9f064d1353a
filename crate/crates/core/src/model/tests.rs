use super::*;
use crate::multires::{build_hierarchy, build_hierarchy_nd, grid_norm_sq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn tiny() -> ModelConfig {
    ModelConfig {
        dim: 2,
        width: 2,
        modes: 2,
        layers: 2,
        ..Default::default()
    }
}

fn smooth_input(level: ResolutionLevel) -> GridField {
    GridField::from_fn(level, |x, y| 1.0 + 0.5 * (PI * x).sin() * (2.0 * PI * y).cos() + 0.3 * x * y)
        .unwrap()
}

fn smooth_target(level: ResolutionLevel) -> GridField {
    GridField::from_fn(level, |x, y| x * (1.0 - x) * y * (1.0 - y)).unwrap()
}

/// `offset` plus random-phase waves at every frequency `|l|, k ≤ modes`, so
/// every retained coefficient carries O(1) energy.
fn band_limited(level: ResolutionLevel, modes: i32, seed: u64, offset: f64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (-modes..=modes)
        .flat_map(|l| (0..=modes).map(move |k| (l as f64, k as f64)))
        .map(|(l, k)| (l, k, rng.random_range(0.2..0.5), rng.random_range(0.0..2.0 * PI)))
        .collect();
    GridField::from_fn(level, |x, y| {
        offset
            + waves
                .iter()
                .map(|(l, k, c, p)| c * (2.0 * PI * (l * x + k * y) + p).cos())
                .sum::<f64>()
    })
    .unwrap()
}

#[test]
fn param_count_matches_enumeration() {
    let cfg = ModelConfig {
        dim: 2,
        width: 8,
        modes: 4,
        layers: 2,
        ..Default::default()
    };
    // Enumerate every scalar the architecture owns.
    let mut count = 0;
    for _o in 0..8 {
        for _c in 0..3 {
            count += 1;
        }
        count += 1;
    }
    for _t in 0..2 {
        for _c in 0..8 {
            for _o in 0..8 {
                for _l in -4i32..=4 {
                    for _k in 0..=4 {
                        count += 2;
                    }
                }
                count += 1;
            }
        }
        count += 8;
    }
    count += 8 + 1;
    assert_eq!(cfg.param_count(), count);

    // The layout tiles 0..P without gaps or overlaps.
    let layout = cfg.layout();
    let mut ranges = vec![layout.lift.clone(), layout.lift_bias.clone()];
    for l in &layout.layers {
        ranges.extend([l.spectral_re.clone(), l.spectral_im.clone(), l.pointwise.clone(), l.bias.clone()]);
    }
    ranges.extend([layout.proj.clone(), layout.proj_bias.clone()]);
    let mut at = 0;
    for r in ranges {
        assert_eq!(r.start, at);
        at = r.end;
    }
    assert_eq!(at, count);
    assert_eq!(layout.len, count);
}

#[test]
fn init_is_deterministic_and_scaled() {
    let cfg = ModelConfig::default();
    let a = init_params(&cfg, 1).unwrap();
    assert_eq!(a, init_params(&cfg, 1).unwrap());
    assert_ne!(a, init_params(&cfg, 2).unwrap());
    let layout = cfg.layout();
    let bound = 1.0 / (cfg.width * cfg.width) as f64;
    for l in &layout.layers {
        assert!(a.values[l.spectral_re.clone()].iter().all(|&v| (0.0..bound).contains(&v)));
        let pw = 1.0 / (cfg.width as f64).sqrt();
        assert!(a.values[l.pointwise.clone()].iter().all(|&v| v.abs() <= pw));
    }
}

#[test]
fn zero_params_give_projection_bias() {
    let cfg = tiny();
    let mut params = ModelParams::zeros(cfg);
    let at = cfg.layout().proj_bias.start;
    params.values[at] = 0.7;
    let level = build_hierarchy(9, 1).unwrap()[0];
    let out = forward(&params, &smooth_input(level)).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.7));
}

#[test]
fn linear_model_is_homogeneous_in_lifting() {
    let cfg = ModelConfig {
        width: 3,
        modes: 2,
        layers: 1,
        activation: Activation::Identity,
        ..Default::default()
    };
    let mut params = init_params(&cfg, 3).unwrap();
    let layout = cfg.layout();
    for r in [layout.lift_bias.clone(), layout.layers[0].bias.clone()] {
        params.values[r].fill(0.0);
    }
    let level = build_hierarchy(17, 1).unwrap()[0];
    let a = smooth_input(level);
    let base = Evaluator::new(&params, &level).unwrap().features(&a).unwrap();
    let mut doubled = params.clone();
    for v in &mut doubled.values[layout.lift.clone()] {
        *v *= 2.0;
    }
    let twice = Evaluator::new(&doubled, &level).unwrap().features(&a).unwrap();
    for (b, t) in base.iter().zip(&twice) {
        assert_eq!(2.0 * b, *t);
    }
}

#[test]
fn output_is_resolution_consistent() {
    let cfg = ModelConfig {
        width: 4,
        modes: 3,
        layers: 2,
        ..Default::default()
    };
    let params = init_params(&cfg, 8).unwrap();
    let hierarchy = build_hierarchy(65, 3).unwrap();
    let outs: Vec<GridField> = hierarchy
        .iter()
        .map(|l| forward(&params, &smooth_input(*l)).unwrap().restrict(&hierarchy[0]).unwrap())
        .collect();
    let diff = |a: &GridField, b: &GridField| {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let coarse_gap = diff(&outs[0], &outs[1]);
    let fine_gap = diff(&outs[1], &outs[2]);
    assert!(fine_gap > 0.0);
    let ratio = coarse_gap / fine_gap;
    assert!(ratio > 3.0, "ratio {ratio} ({coarse_gap:e} / {fine_gap:e})");
}

#[test]
fn rejects_too_coarse_grid() {
    let params = init_params(&ModelConfig { modes: 8, ..tiny() }, 0).unwrap();
    let level = build_hierarchy(9, 1).unwrap()[0];
    assert!(matches!(forward(&params, &smooth_input(level)), Err(Error::ResolutionMismatch(_))));
    let line = build_hierarchy_nd(33, 1, 1).unwrap()[0];
    let field = GridField::zeros(line);
    assert!(forward(&params, &field).is_err());
}

#[test]
fn loss_examples() {
    let cfg = tiny();
    let level = build_hierarchy(9, 1).unwrap()[0];
    let a = smooth_input(level);
    let params = init_params(&cfg, 5).unwrap();
    let out = forward(&params, &a).unwrap();
    assert_eq!(loss(&params, &a, &out).unwrap(), 0.0);

    let ones = GridField::constant(level, 1.0);
    let zero = ModelParams::zeros(cfg);
    assert_eq!(loss(&zero, &a, &ones).unwrap(), grid_norm_sq(&ones));

    // Element-by-element re-summation.
    let u = smooth_target(level);
    let h = level.spacing();
    let mut direct = 0.0;
    for n in 0..level.len() {
        let d = out.values()[n] - u.values()[n];
        direct += h * h * d * d;
    }
    let got = loss(&params, &a, &u).unwrap();
    assert!((got - direct).abs() <= 1e-14 * direct);

    let rel_params = ModelParams { config: ModelConfig { loss: LossKind::Relative, ..cfg }, ..params };
    let rel = loss(&rel_params, &a, &u).unwrap();
    assert!((rel - direct / grid_norm_sq(&u)).abs() <= 1e-13 * rel);

    let other = build_hierarchy(17, 1).unwrap()[0];
    assert!(loss(&rel_params, &a, &smooth_target(other)).is_err());
}

/// Central differences against the analytic gradient. The target sits a small
/// band-limited perturbation away from the model output, which keeps the loss
/// (and its rounding) small relative to the gradient.
fn fd_max_rel_error(params: &ModelParams, a: &GridField, perturbation: &GridField) -> f64 {
    let out = forward(params, a).unwrap();
    let u = GridField::new(
        *a.level(),
        out.values().iter().zip(perturbation.values()).map(|(o, p)| o + 0.01 * p).collect(),
    )
    .unwrap();
    let (_, g) = loss_and_grad(params, &[(a, &u)], Execution::Sequential).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values[i] += eps;
        let mut minus = params.clone();
        minus.values[i] -= eps;
        let fd = (loss(&plus, a, &u).unwrap() - loss(&minus, a, &u).unwrap()) / (2.0 * eps);
        let scale = g.0[i].abs().max(fd.abs());
        let err = (fd - g.0[i]).abs();
        worst = worst.max(if scale < 1e-12 { err } else { err / scale });
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_2d() {
    let level = build_hierarchy(9, 1).unwrap()[0];
    let params = init_params(&tiny(), 11).unwrap();
    assert!(params.len() <= 500);
    let err = fd_max_rel_error(&params, &band_limited(level, 2, 1, 2.0), &band_limited(level, 2, 2, 0.0));
    assert!(err < 1e-6, "max relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_1d_relative_loss() {
    let cfg = ModelConfig {
        dim: 1,
        width: 3,
        modes: 3,
        layers: 2,
        loss: LossKind::Relative,
        ..Default::default()
    };
    let level = build_hierarchy_nd(17, 1, 1).unwrap()[0];
    let a = band_limited(level, 3, 3, 2.0);
    let p = band_limited(level, 3, 4, 0.0);
    let err = fd_max_rel_error(&init_params(&cfg, 2).unwrap(), &a, &p);
    assert!(err < 1e-6, "max relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_with_normalization() {
    let normalization = Normalization {
        input_shift: 1.5,
        input_scale: 0.8,
        output_shift: 0.2,
        output_scale: 0.3,
    };
    let level = build_hierarchy(9, 1).unwrap()[0];
    let params = init_params(&ModelConfig { normalization, ..tiny() }, 5).unwrap();
    let err = fd_max_rel_error(&params, &band_limited(level, 2, 7, 2.0), &band_limited(level, 2, 8, 0.0));
    assert!(err < 1e-6, "max relative error {err:e}");
}

#[test]
fn normalization_fit_and_output_map() {
    let level = build_hierarchy(9, 1).unwrap()[0];
    let a = GridField::from_fn(level, |x, _| 2.0 + x).unwrap();
    let u = GridField::constant(level, 0.5);
    let n = Normalization::fit([(&a, &u), (&a, &u)]).unwrap();
    assert!((n.input_shift - 2.5).abs() < 1e-12);
    assert!(n.input_scale > 0.0);
    assert_eq!((n.output_shift, n.output_scale), (0.5, 1.0));

    let cfg = ModelConfig { normalization: Normalization { output_shift: 0.1, output_scale: 2.0, ..n }, ..tiny() };
    let mut params = ModelParams::zeros(cfg);
    params.values[cfg.layout().proj_bias.start] = 0.7;
    let out = forward(&params, &a).unwrap();
    assert!(out.values().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    assert!(ModelConfig { normalization: Normalization { input_scale: 0.0, ..n }, ..tiny() }
        .validate()
        .is_err());
}

#[test]
fn identical_batch_matches_single_sample() {
    let level = build_hierarchy(9, 1).unwrap()[0];
    let params = init_params(&tiny(), 1).unwrap();
    let (a, u) = (smooth_input(level), smooth_target(level));
    let single = grad(&params, &[(&a, &u)], Execution::Sequential).unwrap();
    let pair = grad(&params, &[(&a, &u), (&a, &u)], Execution::Parallel).unwrap();
    assert_eq!(single, pair);
    let five = grad(&params, &[(&a, &u); 5], Execution::Parallel).unwrap();
    for (s, f) in single.0.iter().zip(&five.0) {
        assert!((s - f).abs() <= 1e-14 * s.abs().max(1e-300));
    }
}

#[test]
fn gradient_vanishes_at_zero_residual() {
    let level = build_hierarchy(17, 1).unwrap()[0];
    let params = init_params(&tiny(), 9).unwrap();
    let a = smooth_input(level);
    let u = forward(&params, &a).unwrap();
    let g = grad(&params, &[(&a, &u)], Execution::Sequential).unwrap();
    assert!(g.norm() < 1e-12);
}

#[test]
fn residual_sign_flip_negates_gradient() {
    let level = build_hierarchy(17, 1).unwrap()[0];
    let params = init_params(&tiny(), 6).unwrap();
    let a = smooth_input(level);
    let u = smooth_target(level);
    let out = forward(&params, &a).unwrap();
    let mirrored = GridField::new(
        level,
        out.values().iter().zip(u.values()).map(|(o, t)| 2.0 * o - t).collect(),
    )
    .unwrap();
    let g1 = grad(&params, &[(&a, &u)], Execution::Sequential).unwrap();
    let g2 = grad(&params, &[(&a, &mirrored)], Execution::Sequential).unwrap();
    let scale = g1.norm();
    for (x, y) in g1.0.iter().zip(&g2.0) {
        assert!((x + y).abs() <= 1e-12 * scale);
    }
}

#[test]
fn sequential_and_parallel_batches_agree_bitwise() {
    let level = build_hierarchy(17, 1).unwrap()[0];
    let params = init_params(&tiny(), 4).unwrap();
    let inputs: Vec<GridField> = (0..7)
        .map(|s| GridField::from_fn(level, |x, y| 1.0 + 0.1 * s as f64 * x + y * y).unwrap())
        .collect();
    let u = smooth_target(level);
    let batch: Vec<(&GridField, &GridField)> = inputs.iter().map(|a| (a, &u)).collect();
    let seq = loss_and_grad(&params, &batch, Execution::Sequential).unwrap();
    let par = loss_and_grad(&params, &batch, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
}



