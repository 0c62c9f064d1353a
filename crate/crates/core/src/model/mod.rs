//! A small spectral neural operator with exact reverse-mode gradients.
//!
//! Architecture, per grid node `n`:
//!
//! ```text
//! v₀ = P·[a, x, (y)] + p                                  lifting
//! v_{t+1} = σ(W_t v_t + b_t + F⁻¹(S_t · F(v_t)))          t = 0..L-1
//! out = Q·v_L + q                                         projection
//! ```
//!
//! `F` keeps `modes + 1` frequencies on the contiguous axis and `2·modes + 1`
//! on the other (2D); `S_t` are complex per-frequency channel-mixing weights.
//! The last layer has no activation. Parameters live in one flat vector whose
//! layout is described by [`ParamLayout`].

mod checkpoint;
mod spectral;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use spectral::{SpectralBasis, Spectrum};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::multires::{GridField, ResolutionLevel};
use crate::par::REDUCTION_CHUNK;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation of GELU.
    Gelu,
    Identity,
}

impl Activation {
    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    const GELU_A: f64 = 0.044_715;

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => {
                let t = (Self::GELU_C * (x + Self::GELU_A * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => {
                let t = (Self::GELU_C * (x + Self::GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t)
                    + 0.5 * x * (1.0 - t * t) * Self::GELU_C * (1.0 + 3.0 * Self::GELU_A * x * x)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `‖G(a) − u‖²`
    #[default]
    Squared,
    /// `‖G(a) − u‖² / ‖u‖²`
    Relative,
}

/// Fixed affine maps around the network: the field channel enters as
/// `(a − input_shift) / input_scale` and the output leaves as
/// `output_scale · y + output_shift`. Not trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub input_shift: f64,
    pub input_scale: f64,
    pub output_shift: f64,
    pub output_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            input_shift: 0.0,
            input_scale: 1.0,
            output_shift: 0.0,
            output_scale: 1.0,
        }
    }
}

impl Normalization {
    /// Pointwise mean and standard deviation of inputs and targets.
    pub fn fit<'a>(pairs: impl IntoIterator<Item = (&'a GridField, &'a GridField)>) -> Result<Self> {
        let (mut n, mut sa, mut saa, mut su, mut suu) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, u) in pairs {
            for (x, y) in a.values().iter().zip(u.values()) {
                n += 1.0;
                sa += x;
                saa += x * x;
                su += y;
                suu += y * y;
            }
        }
        if n < 2.0 {
            return Err(Error::InvalidArgument("normalization needs data".into()));
        }
        let std = |s: f64, ss: f64| ((ss - s * s / n) / (n - 1.0)).max(0.0).sqrt();
        let (a_std, u_std) = (std(sa, saa), std(su, suu));
        Ok(Self {
            input_shift: sa / n,
            input_scale: if a_std > 0.0 { a_std } else { 1.0 },
            output_shift: su / n,
            output_scale: if u_std > 0.0 { u_std } else { 1.0 },
        })
    }

    fn validate(&self) -> bool {
        [self.input_shift, self.input_scale, self.output_shift, self.output_scale]
            .iter()
            .all(|v| v.is_finite())
            && self.input_scale != 0.0
            && self.output_scale != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Spatial dimension of the fields (1 or 2).
    pub dim: usize,
    pub width: usize,
    pub modes: usize,
    pub layers: usize,
    pub activation: Activation,
    pub loss: LossKind,
    pub normalization: Normalization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            width: 16,
            modes: 8,
            layers: 3,
            activation: Activation::Gelu,
            loss: LossKind::Squared,
            normalization: Normalization::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim)
            || self.width == 0
            || self.modes == 0
            || self.layers == 0
            || !self.normalization.validate()
        {
            return Err(Error::InvalidArgument(format!("invalid model config {self:?}")));
        }
        Ok(())
    }

    /// Input channels of the lifting map: the field plus one coordinate per axis.
    pub fn lift_inputs(&self) -> usize {
        1 + self.dim
    }

    /// Spectral coefficients per channel.
    pub fn n_coef(&self) -> usize {
        let nl = if self.dim == 2 { 2 * self.modes + 1 } else { 1 };
        nl * (self.modes + 1)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> usize {
        let (w, c) = (self.width, self.lift_inputs());
        w * c + w + self.layers * (2 * w * w * self.n_coef() + w * w + w) + w + 1
    }

    /// Smallest grid the truncation fits on.
    pub fn check_resolution(&self, level: &ResolutionLevel) -> Result<()> {
        if level.dim != self.dim {
            return Err(Error::ResolutionMismatch(format!(
                "model is {}D but the field is {}D",
                self.dim, level.dim
            )));
        }
        if 2 * self.modes + 1 > level.points_per_side {
            return Err(Error::ResolutionMismatch(format!(
                "{} modes need at least {} points per side, got {}",
                self.modes,
                2 * self.modes + 1,
                level.points_per_side
            )));
        }
        Ok(())
    }
}

/// Slices of the flat parameter vector belonging to one spectral layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlices {
    /// Real parts of `S_t`, indexed `[c_in][c_out][coef]`.
    pub spectral_re: Range<usize>,
    pub spectral_im: Range<usize>,
    /// `W_t`, indexed `[c_out][c_in]`.
    pub pointwise: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// `P`, indexed `[c_out][c_in]`.
    pub lift: Range<usize>,
    pub lift_bias: Range<usize>,
    pub layers: Vec<LayerSlices>,
    pub proj: Range<usize>,
    pub proj_bias: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    fn new(cfg: &ModelConfig) -> Self {
        let w = cfg.width;
        let mut at = 0;
        let mut next = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let lift = next(w * cfg.lift_inputs());
        let lift_bias = next(w);
        let layers = (0..cfg.layers)
            .map(|_| LayerSlices {
                spectral_re: next(w * w * cfg.n_coef()),
                spectral_im: next(w * w * cfg.n_coef()),
                pointwise: next(w * w),
                bias: next(w),
            })
            .collect();
        let proj = next(w);
        let proj_bias = next(1);
        Self {
            lift,
            lift_bias,
            layers,
            proj,
            proj_bias,
            len: at,
        }
    }
}

/// Flat parameter vector `θ` together with the config that shapes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub values: Vec<f64>,
}

/// Gradient with the same layout as [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &GradVector) -> GradVector {
        GradVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl ModelParams {
    pub fn new(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self { config, values })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            values: vec![0.0; config.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deterministic initialisation: spectral weights uniform in `[0, 1/width²)`,
/// pointwise weights and biases uniform in `±1/√fan_in`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.len];
    let mut uniform = |range: Range<usize>, bound: f64, rng: &mut ChaCha8Rng| {
        for v in &mut values[range] {
            *v = rng.random_range(-bound..bound);
        }
    };
    let w = config.width as f64;
    let lift_bound = 1.0 / (config.lift_inputs() as f64).sqrt();
    uniform(layout.lift.clone(), lift_bound, &mut rng);
    uniform(layout.lift_bias.clone(), lift_bound, &mut rng);
    for layer in &layout.layers {
        uniform(layer.pointwise.clone(), 1.0 / w.sqrt(), &mut rng);
        uniform(layer.bias.clone(), 1.0 / w.sqrt(), &mut rng);
    }
    uniform(layout.proj.clone(), 1.0 / w.sqrt(), &mut rng);
    uniform(layout.proj_bias.clone(), 1.0 / w.sqrt(), &mut rng);
    let scale = 1.0 / (w * w);
    for layer in &layout.layers {
        for r in [layer.spectral_re.clone(), layer.spectral_im.clone()] {
            for v in &mut values[r] {
                *v = scale * rng.random::<f64>();
            }
        }
    }
    ModelParams::new(*config, values)
}

/// Activations kept for the reverse pass.
struct Tape {
    inputs: Vec<f64>,
    /// `v_t`, `t = 0..=L`, each `width × n_points`.
    states: Vec<Vec<f64>>,
    /// Pre-activations `z_t`.
    pre: Vec<Vec<f64>>,
    /// `F(v_t)` per channel.
    spectra: Vec<Spectrum>,
    output: Vec<f64>,
}

/// Evaluation context for one resolution.
pub struct Evaluator<'a> {
    params: &'a ModelParams,
    layout: ParamLayout,
    basis: SpectralBasis,
    level: ResolutionLevel,
}

impl<'a> Evaluator<'a> {
    pub fn new(params: &'a ModelParams, level: &ResolutionLevel) -> Result<Self> {
        params.config.check_resolution(level)?;
        Ok(Self {
            params,
            layout: params.config.layout(),
            basis: SpectralBasis::new(level.points_per_side, level.dim, params.config.modes),
            level: *level,
        })
    }

    fn check_field(&self, f: &GridField) -> Result<()> {
        if f.level().points_per_side != self.level.points_per_side || f.level().dim != self.level.dim
        {
            return Err(Error::ResolutionMismatch(format!(
                "evaluator built for R = {}, field has R = {}",
                self.level.points_per_side,
                f.level().points_per_side
            )));
        }
        Ok(())
    }

    fn run(&self, a: &GridField) -> Tape {
        let cfg = &self.params.config;
        let theta = &self.params.values;
        let (w, n, q) = (cfg.width, self.level.len(), self.basis.n_coef());
        let r = self.level.points_per_side;

        let mut inputs = Vec::with_capacity(cfg.lift_inputs() * n);
        let norm = cfg.normalization;
        inputs.extend(a.values().iter().map(|v| (v - norm.input_shift) / norm.input_scale));
        if cfg.dim == 1 {
            inputs.extend((0..r).map(|i| self.level.coord(i)));
        } else {
            inputs.extend((0..n).map(|p| self.level.coord(p / r)));
            inputs.extend((0..n).map(|p| self.level.coord(p % r)));
        }

        let mut v0 = vec![0.0; w * n];
        affine(
            &theta[self.layout.lift.clone()],
            &theta[self.layout.lift_bias.clone()],
            &inputs,
            cfg.lift_inputs(),
            &mut v0,
        );

        let mut states = vec![v0];
        let mut pre = Vec::with_capacity(cfg.layers);
        let mut spectra = Vec::with_capacity(cfg.layers);
        let mut mixed = Spectrum::zeros(q);
        for (t, slices) in self.layout.layers.iter().enumerate() {
            let v = &states[t];
            let mut spec = Spectrum::zeros(w * q);
            for c in 0..w {
                self.basis.forward(
                    &v[c * n..(c + 1) * n],
                    &mut spec.re[c * q..(c + 1) * q],
                    &mut spec.im[c * q..(c + 1) * q],
                );
            }
            let mut z = vec![0.0; w * n];
            affine(
                &theta[slices.pointwise.clone()],
                &theta[slices.bias.clone()],
                v,
                w,
                &mut z,
            );
            let s_re = &theta[slices.spectral_re.clone()];
            let s_im = &theta[slices.spectral_im.clone()];
            let mut synth = vec![0.0; n];
            for o in 0..w {
                mixed.re.fill(0.0);
                mixed.im.fill(0.0);
                for c in 0..w {
                    let off = (c * w + o) * q;
                    let (wr, wi) = (&s_re[off..off + q], &s_im[off..off + q]);
                    let (xr, xi) = (&spec.re[c * q..(c + 1) * q], &spec.im[c * q..(c + 1) * q]);
                    for k in 0..q {
                        mixed.re[k] += wr[k] * xr[k] - wi[k] * xi[k];
                        mixed.im[k] += wr[k] * xi[k] + wi[k] * xr[k];
                    }
                }
                self.basis.inverse(&mixed.re, &mixed.im, &mut synth);
                for (zz, s) in z[o * n..(o + 1) * n].iter_mut().zip(&synth) {
                    *zz += s;
                }
            }
            let last = t + 1 == cfg.layers;
            let next = if last {
                z.clone()
            } else {
                z.iter().map(|&x| cfg.activation.apply(x)).collect()
            };
            pre.push(z);
            spectra.push(spec);
            states.push(next);
        }

        let mut output = vec![0.0; n];
        affine(
            &theta[self.layout.proj.clone()],
            &theta[self.layout.proj_bias.clone()],
            states.last().unwrap(),
            w,
            &mut output,
        );
        for o in &mut output {
            *o = norm.output_scale * *o + norm.output_shift;
        }
        Tape {
            inputs,
            states,
            pre,
            spectra,
            output,
        }
    }

    pub fn forward(&self, a: &GridField) -> Result<GridField> {
        self.check_field(a)?;
        let tape = self.run(a);
        GridField::new(self.level, tape.output)
            .map_err(|_| Error::NonFinite("model output".into()))
    }

    /// Pre-projection features `v_L`, channel-major.
    pub fn features(&self, a: &GridField) -> Result<Vec<f64>> {
        self.check_field(a)?;
        Ok(self.run(a).states.pop().unwrap())
    }

    pub fn loss(&self, a: &GridField, u: &GridField) -> Result<f64> {
        self.check_field(a)?;
        self.check_field(u)?;
        let tape = self.run(a);
        loss_value(self.params.config.loss, &self.level, &tape.output, u.values())
    }

    /// Loss of one sample; adds `scale · ∇θ loss` into `grad`.
    pub fn loss_and_grad_into(
        &self,
        a: &GridField,
        u: &GridField,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_field(a)?;
        self.check_field(u)?;
        let cfg = &self.params.config;
        let tape = self.run(a);
        let value = loss_value(cfg.loss, &self.level, &tape.output, u.values())?;

        let hd = self.level.spacing().powi(self.level.dim as i32);
        let denom = match cfg.loss {
            LossKind::Squared => 1.0,
            LossKind::Relative => hd * u.values().iter().map(|v| v * v).sum::<f64>(),
        };
        let coeff = 2.0 * hd / denom * scale * cfg.normalization.output_scale;
        let g_out: Vec<f64> = tape
            .output
            .iter()
            .zip(u.values())
            .map(|(o, t)| coeff * (o - t))
            .collect();
        self.backward(&tape, &g_out, grad);
        Ok(value)
    }

    fn backward(&self, tape: &Tape, g_out: &[f64], grad: &mut [f64]) {
        let cfg = &self.params.config;
        let theta = &self.params.values;
        let layout = &self.layout;
        let (w, n, q) = (cfg.width, self.level.len(), self.basis.n_coef());

        let mut g_state = vec![0.0; w * n];
        affine_backward(
            &theta[layout.proj.clone()],
            tape.states.last().unwrap(),
            g_out,
            w,
            1,
            grad,
            layout.proj.start,
            layout.proj_bias.start,
            &mut g_state,
        );

        let mut g_mixed = Spectrum::zeros(q);
        for t in (0..cfg.layers).rev() {
            let slices = &layout.layers[t];
            let last = t + 1 == cfg.layers;
            let g_pre: Vec<f64> = if last {
                g_state
            } else {
                g_state
                    .iter()
                    .zip(&tape.pre[t])
                    .map(|(g, &z)| g * cfg.activation.derivative(z))
                    .collect()
            };

            let v = &tape.states[t];
            let mut g_v = vec![0.0; w * n];
            affine_backward(
                &theta[slices.pointwise.clone()],
                v,
                &g_pre,
                w,
                w,
                grad,
                slices.pointwise.start,
                slices.bias.start,
                &mut g_v,
            );

            let spec = &tape.spectra[t];
            let s_re = &theta[slices.spectral_re.clone()];
            let s_im = &theta[slices.spectral_im.clone()];
            let mut g_spec = Spectrum::zeros(w * q);
            for o in 0..w {
                self.basis
                    .inverse_adjoint(&g_pre[o * n..(o + 1) * n], &mut g_mixed.re, &mut g_mixed.im);
                for c in 0..w {
                    let off = (c * w + o) * q;
                    let (xr, xi) = (&spec.re[c * q..(c + 1) * q], &spec.im[c * q..(c + 1) * q]);
                    let (wr, wi) = (&s_re[off..off + q], &s_im[off..off + q]);
                    {
                        let gw_re = &mut grad[slices.spectral_re.start + off..][..q];
                        for k in 0..q {
                            gw_re[k] += g_mixed.re[k] * xr[k] + g_mixed.im[k] * xi[k];
                        }
                    }
                    {
                        let gw_im = &mut grad[slices.spectral_im.start + off..][..q];
                        for k in 0..q {
                            gw_im[k] += g_mixed.im[k] * xr[k] - g_mixed.re[k] * xi[k];
                        }
                    }
                    let (gx_re, gx_im) = (
                        &mut g_spec.re[c * q..(c + 1) * q],
                        &mut g_spec.im[c * q..(c + 1) * q],
                    );
                    for k in 0..q {
                        gx_re[k] += g_mixed.re[k] * wr[k] + g_mixed.im[k] * wi[k];
                        gx_im[k] += g_mixed.im[k] * wr[k] - g_mixed.re[k] * wi[k];
                    }
                }
            }
            for c in 0..w {
                self.basis.forward_adjoint(
                    &g_spec.re[c * q..(c + 1) * q],
                    &g_spec.im[c * q..(c + 1) * q],
                    &mut g_v[c * n..(c + 1) * n],
                );
            }
            g_state = g_v;
        }

        let mut g_inputs = vec![0.0; cfg.lift_inputs() * n];
        affine_backward(
            &theta[layout.lift.clone()],
            &tape.inputs,
            &g_state,
            cfg.lift_inputs(),
            w,
            grad,
            layout.lift.start,
            layout.lift_bias.start,
            &mut g_inputs,
        );
    }
}

/// `out[o][n] = bias[o] + Σ_c weight[o][c] x[c][n]`.
fn affine(weight: &[f64], bias: &[f64], x: &[f64], c_in: usize, out: &mut [f64]) {
    let n = x.len() / c_in;
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[o]);
        for c in 0..c_in {
            let wgt = weight[o * c_in + c];
            for (r, xv) in row.iter_mut().zip(&x[c * n..(c + 1) * n]) {
                *r += wgt * xv;
            }
        }
    }
}

/// Reverse of [`affine`]: accumulates weight/bias gradients into `grad` and
/// input gradients into `g_x`.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    weight: &[f64],
    x: &[f64],
    g_out: &[f64],
    c_in: usize,
    c_out: usize,
    grad: &mut [f64],
    weight_at: usize,
    bias_at: usize,
    g_x: &mut [f64],
) {
    let n = x.len() / c_in;
    for o in 0..c_out {
        let g = &g_out[o * n..(o + 1) * n];
        grad[bias_at + o] += g.iter().sum::<f64>();
        for c in 0..c_in {
            let xs = &x[c * n..(c + 1) * n];
            grad[weight_at + o * c_in + c] += g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            let wgt = weight[o * c_in + c];
            for (gx, gv) in g_x[c * n..(c + 1) * n].iter_mut().zip(g) {
                *gx += wgt * gv;
            }
        }
    }
}

fn loss_value(kind: LossKind, level: &ResolutionLevel, out: &[f64], target: &[f64]) -> Result<f64> {
    let hd = level.spacing().powi(level.dim as i32);
    let sq = hd * out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
    let value = match kind {
        LossKind::Squared => sq,
        LossKind::Relative => sq / (hd * target.iter().map(|v| v * v).sum::<f64>()),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("loss".into()))
    }
}

pub fn forward(params: &ModelParams, a: &GridField) -> Result<GridField> {
    Evaluator::new(params, a.level())?.forward(a)
}

pub fn loss(params: &ModelParams, a: &GridField, u: &GridField) -> Result<f64> {
    if a.level() != u.level() {
        return Err(Error::ResolutionMismatch("input and target resolutions differ".into()));
    }
    Evaluator::new(params, a.level())?.loss(a, u)
}

/// Mean loss and its exact gradient over a batch at one resolution.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(&GridField, &GridField)],
    exec: Execution,
) -> Result<(f64, GradVector)> {
    let (first, _) = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let eval = Evaluator::new(params, first.level())?;
    let (sum_loss, sum_grad) = eval.sum_over(batch, exec)?;
    let b = batch.len() as f64;
    Ok((
        sum_loss / b,
        GradVector(sum_grad.into_iter().map(|g| g / b).collect()),
    ))
}

pub fn grad(
    params: &ModelParams,
    batch: &[(&GridField, &GridField)],
    exec: Execution,
) -> Result<GradVector> {
    loss_and_grad(params, batch, exec).map(|(_, g)| g)
}

impl Evaluator<'_> {
    /// Sum of per-sample losses and gradients, reduced in batch order.
    pub fn sum_over(
        &self,
        batch: &[(&GridField, &GridField)],
        exec: Execution,
    ) -> Result<(f64, Vec<f64>)> {
        let p = self.params.len();
        let partials = exec.map_chunks(batch, REDUCTION_CHUNK, |chunk| -> Result<(f64, Vec<f64>)> {
            let mut g = vec![0.0; p];
            let mut l = 0.0;
            for (a, u) in chunk {
                l += self.loss_and_grad_into(a, u, 1.0, &mut g)?;
            }
            Ok((l, g))
        });
        let mut total_loss = 0.0;
        let mut total = vec![0.0; p];
        for part in partials {
            let (l, g) = part?;
            total_loss += l;
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
        }
        Ok((total_loss, total))
    }
}

#[cfg(test)]
mod tests;
