//! Truncated Fourier transforms on node grids and their exact adjoints.
//!
//! The forward transform is a trapezoid-rule quadrature of
//! `X(l, k) = ∫∫ f(x, y) e^{-2πi(l x + k y)} dx dy` for `k ∈ 0..=K` (the
//! half-complex axis, contiguous in memory) and `l ∈ -K..=K`. The inverse is
//! the real part of the truncated Fourier series, with weight 2 on `k > 0`
//! columns standing in for their conjugate partners. Both maps are linear
//! and resolution independent up to quadrature error, so a spectral layer
//! trained on one grid can be evaluated on another.
//!
//! In 1D the `l` axis collapses to the single frequency 0.

use std::f64::consts::PI;

/// Real and imaginary parts of `channels × n_coef` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    r: usize,
    dim: usize,
    nk: usize,
    nl: usize,
    // Half-complex axis tables, [k][j].
    wcos_k: Vec<f64>,
    wsin_k: Vec<f64>,
    acos_k: Vec<f64>,
    asin_k: Vec<f64>,
    // Full axis tables, [l][i] (2D only).
    cos_l: Vec<f64>,
    sin_l: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralBasis {
    /// Tables for `points` nodes per side keeping `modes` frequencies.
    /// Caller guarantees `2 * modes + 1 <= points`.
    pub fn new(points: usize, dim: usize, modes: usize) -> Self {
        let r = points;
        let h = 1.0 / (r - 1) as f64;
        let weights: Vec<f64> = (0..r)
            .map(|n| if n == 0 || n == r - 1 { 0.5 * h } else { h })
            .collect();
        let nk = modes + 1;
        let nl = if dim == 2 { 2 * modes + 1 } else { 1 };

        let mut wcos_k = Vec::with_capacity(nk * r);
        let mut wsin_k = Vec::with_capacity(nk * r);
        let mut acos_k = Vec::with_capacity(nk * r);
        let mut asin_k = Vec::with_capacity(nk * r);
        for k in 0..nk {
            let alpha = if k == 0 { 1.0 } else { 2.0 };
            for (j, w) in weights.iter().enumerate() {
                let (s, c) = (2.0 * PI * k as f64 * j as f64 * h).sin_cos();
                wcos_k.push(w * c);
                wsin_k.push(w * s);
                acos_k.push(alpha * c);
                asin_k.push(alpha * s);
            }
        }
        let mut cos_l = Vec::new();
        let mut sin_l = Vec::new();
        if dim == 2 {
            for li in 0..nl {
                let freq = li as f64 - modes as f64;
                for i in 0..r {
                    let (s, c) = (2.0 * PI * freq * i as f64 * h).sin_cos();
                    cos_l.push(c);
                    sin_l.push(s);
                }
            }
        }
        Self {
            r,
            dim,
            nk,
            nl,
            wcos_k,
            wsin_k,
            acos_k,
            asin_k,
            cos_l,
            sin_l,
            weights,
        }
    }

    /// Coefficients per channel, `n_l × n_k`.
    pub fn n_coef(&self) -> usize {
        self.nk * self.nl
    }

    pub fn n_points(&self) -> usize {
        self.r.pow(self.dim as u32)
    }

    fn rows(&self) -> usize {
        if self.dim == 2 {
            self.r
        } else {
            1
        }
    }

    /// Forward transform of one channel into `re/im[0..n_coef]`.
    pub fn forward(&self, f: &[f64], re: &mut [f64], im: &mut [f64]) {
        let (r, nk) = (self.r, self.nk);
        let rows = self.rows();
        let mut gr = vec![0.0; rows * nk];
        let mut gi = vec![0.0; rows * nk];
        for i in 0..rows {
            let row = &f[i * r..(i + 1) * r];
            for k in 0..nk {
                gr[i * nk + k] = dot(row, &self.wcos_k[k * r..(k + 1) * r]);
                gi[i * nk + k] = -dot(row, &self.wsin_k[k * r..(k + 1) * r]);
            }
        }
        if self.dim == 1 {
            re[..nk].copy_from_slice(&gr);
            im[..nk].copy_from_slice(&gi);
            return;
        }
        re[..self.n_coef()].fill(0.0);
        im[..self.n_coef()].fill(0.0);
        for i in 0..r {
            let w = self.weights[i];
            let (g_re, g_im) = (&gr[i * nk..(i + 1) * nk], &gi[i * nk..(i + 1) * nk]);
            for l in 0..self.nl {
                let c = w * self.cos_l[l * r + i];
                let s = w * self.sin_l[l * r + i];
                let (x_re, x_im) = (&mut re[l * nk..(l + 1) * nk], &mut im[l * nk..(l + 1) * nk]);
                for k in 0..nk {
                    x_re[k] += g_re[k] * c + g_im[k] * s;
                    x_im[k] += g_im[k] * c - g_re[k] * s;
                }
            }
        }
    }

    /// Adjoint of [`forward`](Self::forward): accumulates into `out`.
    pub fn forward_adjoint(&self, g_re: &[f64], g_im: &[f64], out: &mut [f64]) {
        let (r, nk) = (self.r, self.nk);
        let rows = self.rows();
        let (gr, gi) = self.l_axis_to_rows(g_re, g_im, true);
        for i in 0..rows {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..nk {
                let (a, b) = (gr[i * nk + k], gi[i * nk + k]);
                let wc = &self.wcos_k[k * r..(k + 1) * r];
                let ws = &self.wsin_k[k * r..(k + 1) * r];
                for j in 0..r {
                    row[j] += a * wc[j] - b * ws[j];
                }
            }
        }
    }

    /// Inverse transform of one channel: overwrites `out`.
    pub fn inverse(&self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let (r, nk) = (self.r, self.nk);
        let rows = self.rows();
        let (hr, hi) = self.l_axis_to_rows(re, im, false);
        for i in 0..rows {
            let row = &mut out[i * r..(i + 1) * r];
            row.fill(0.0);
            for k in 0..nk {
                let (a, b) = (hr[i * nk + k], hi[i * nk + k]);
                let ac = &self.acos_k[k * r..(k + 1) * r];
                let asn = &self.asin_k[k * r..(k + 1) * r];
                for j in 0..r {
                    row[j] += a * ac[j] - b * asn[j];
                }
            }
        }
    }

    /// Adjoint of [`inverse`](Self::inverse): overwrites `re/im[0..n_coef]`.
    pub fn inverse_adjoint(&self, g: &[f64], re: &mut [f64], im: &mut [f64]) {
        let (r, nk) = (self.r, self.nk);
        let rows = self.rows();
        let mut hr = vec![0.0; rows * nk];
        let mut hi = vec![0.0; rows * nk];
        for i in 0..rows {
            let row = &g[i * r..(i + 1) * r];
            for k in 0..nk {
                hr[i * nk + k] = dot(row, &self.acos_k[k * r..(k + 1) * r]);
                hi[i * nk + k] = -dot(row, &self.asin_k[k * r..(k + 1) * r]);
            }
        }
        if self.dim == 1 {
            re[..nk].copy_from_slice(&hr);
            im[..nk].copy_from_slice(&hi);
            return;
        }
        re[..self.n_coef()].fill(0.0);
        im[..self.n_coef()].fill(0.0);
        for i in 0..r {
            let (h_re, h_im) = (&hr[i * nk..(i + 1) * nk], &hi[i * nk..(i + 1) * nk]);
            for l in 0..self.nl {
                let c = self.cos_l[l * r + i];
                let s = self.sin_l[l * r + i];
                let (y_re, y_im) = (&mut re[l * nk..(l + 1) * nk], &mut im[l * nk..(l + 1) * nk]);
                for k in 0..nk {
                    y_re[k] += h_re[k] * c + h_im[k] * s;
                    y_im[k] += h_im[k] * c - h_re[k] * s;
                }
            }
        }
    }

    /// Map `[l][k]` coefficients to `[i][k]` rows along the full axis.
    ///
    /// `weighted = false`: `H = Σ_l Y e^{+iθ}` (inverse, stage 1).
    /// `weighted = true`: `w_i Σ_l (gXr cos - gXi sin, gXr sin + gXi cos)`
    /// (adjoint of forward stage 2), which is the same rotation scaled by `w_i`.
    fn l_axis_to_rows(&self, re: &[f64], im: &[f64], weighted: bool) -> (Vec<f64>, Vec<f64>) {
        let (r, nk) = (self.r, self.nk);
        if self.dim == 1 {
            return (re[..nk].to_vec(), im[..nk].to_vec());
        }
        let mut hr = vec![0.0; r * nk];
        let mut hi = vec![0.0; r * nk];
        for i in 0..r {
            let w = if weighted { self.weights[i] } else { 1.0 };
            let (h_re, h_im) = (&mut hr[i * nk..(i + 1) * nk], &mut hi[i * nk..(i + 1) * nk]);
            for l in 0..self.nl {
                let c = w * self.cos_l[l * r + i];
                let s = w * self.sin_l[l * r + i];
                let (y_re, y_im) = (&re[l * nk..(l + 1) * nk], &im[l * nk..(l + 1) * nk]);
                for k in 0..nk {
                    h_re[k] += y_re[k] * c - y_im[k] * s;
                    h_im[k] += y_re[k] * s + y_im[k] * c;
                }
            }
        }
        (hr, hi)
    }

    /// Full Hermitian-symmetric synthesis `Σ_{k=-K..K} Z e^{iφ}`, returning
    /// the imaginary part. The real inverse discards exactly this residue.
    pub fn imaginary_residue(&self, re: &[f64], im: &[f64]) -> Vec<f64> {
        let (r, nk, modes) = (self.r, self.nk, self.nk - 1);
        let rows = self.rows();
        let mut out = vec![0.0; rows * r];
        // Coefficient of frequency (fl, fk) in the Hermitian extension.
        let coef = |fl: i64, fk: i64| -> (f64, f64) {
            let idx = |l: i64, k: i64| ((l + if self.dim == 2 { modes as i64 } else { 0 }) as usize) * nk + k as usize;
            if fk > 0 {
                (re[idx(fl, fk)], im[idx(fl, fk)])
            } else if fk < 0 {
                (re[idx(-fl, -fk)], -im[idx(-fl, -fk)])
            } else {
                let (a, b) = (re[idx(fl, 0)], im[idx(fl, 0)]);
                let (c, d) = (re[idx(-fl, 0)], -im[idx(-fl, 0)]);
                (0.5 * (a + c), 0.5 * (b + d))
            }
        };
        let lmax = if self.dim == 2 { modes as i64 } else { 0 };
        let h = 1.0 / (r - 1) as f64;
        for i in 0..rows {
            for j in 0..r {
                let mut acc = 0.0;
                for fl in -lmax..=lmax {
                    for fk in -(modes as i64)..=modes as i64 {
                        let (a, b) = coef(fl, fk);
                        let phase = 2.0 * PI * (fl as f64 * i as f64 + fk as f64 * j as f64) * h;
                        let (s, c) = phase.sin_cos();
                        acc += a * s + b * c;
                    }
                }
                out[i * r + j] = acc;
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
