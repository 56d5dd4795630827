//! Desk-scale reference denoiser.
//!
//! ```text
//! in  = [x_t ; condition ; ψ(pos)]               (per latent position)
//! h1  = silu(W1·in + s·U1·(D1·in) + b1 + Wt·φ(t))  1×1, low-rank adapter
//! h2  = silu(conv3x3(h1) + b2)                     zero padding
//! out = W3·h2 + s·U3·(D3·h2) + b3 + c(t)·x_t       1×1, low-rank adapter
//! ```
//!
//! with `φ(t) = [t, sin πt, cos πt]` and `ψ = [u, v, sin πu, sin πv]` for
//! cell-centre coordinates `u, v ∈ (−1, 1)` across the grid, so the two halves
//! of a concatenated canvas are told apart. The skip gain
//! `c(t) = g·[1, φ(t)]` starts at 1 and carries the noise part of the
//! velocity past the narrow hidden layer. The prompt is ignored. All parameters
//! live in one flat vector so optimizers and checkpoints treat them uniformly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adapter::{apply_adapter, LowRankAdapter, Matrix};
use super::{Condition, DenoiserBackend, LatentTensor, LossFn, TrainableBackend};
use crate::error::{Error, Result};

const TIME_FEATURES: usize = 3;
const POS_FEATURES: usize = 4;
const TAPS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub hidden: usize,
    /// Adapter rank; 0 disables both adapters.
    pub rank: usize,
    pub lora_scale: f64,
    /// When false only adapter parameters receive gradients.
    pub train_base: bool,
    pub init_seed: u64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden == 0 {
            return Err(Error::Config("toy backend needs positive latent and hidden widths".into()));
        }
        if !self.lora_scale.is_finite() {
            return Err(Error::Config("lora_scale must be finite".into()));
        }
        if !self.train_base && self.rank == 0 {
            return Err(Error::Config("nothing to train: base frozen and adapters disabled".into()));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        self.latent_channels + self.cond_channels + POS_FEATURES
    }
}

/// Parameter offsets into the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    wt: Range<usize>,
    down1: Range<usize>,
    up1: Range<usize>,
    k2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    down3: Range<usize>,
    up3: Range<usize>,
    skip: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ToyConfig) -> Self {
        let cin = cfg.input_channels();
        let (h, l, r) = (cfg.hidden, cfg.latent_channels, cfg.rank);
        let mut at = 0;
        let mut take = |n: usize| {
            let range = at..at + n;
            at += n;
            range
        };
        let w1 = take(h * cin);
        let b1 = take(h);
        let wt = take(h * TIME_FEATURES);
        let down1 = take(r * cin);
        let up1 = take(h * r);
        let k2 = take(TAPS * h * h);
        let b2 = take(h);
        let w3 = take(l * h);
        let b3 = take(l);
        let down3 = take(r * h);
        let up3 = take(l * r);
        let skip = take(1 + TIME_FEATURES);
        Layout {
            w1,
            b1,
            wt,
            down1,
            up1,
            k2,
            b2,
            w3,
            b3,
            down3,
            up3,
            skip,
            total: at,
        }
    }

    fn adapter_ranges(&self) -> [&Range<usize>; 4] {
        [&self.down1, &self.up1, &self.down3, &self.up3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    config: ToyConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Position-major activations kept for the backward pass.
struct Cache {
    height: usize,
    width: usize,
    phi: [f64; TIME_FEATURES],
    input: Vec<f64>,
    a1: Vec<f64>,
    u1: Vec<f64>,
    h1: Vec<f64>,
    u2: Vec<f64>,
    h2: Vec<f64>,
    a3: Vec<f64>,
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-u))
}

#[inline]
fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

#[inline]
fn silu_grad(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `acc += scale * v`
#[inline]
fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// `out[o] = Σ_i m[o, i] · x[i]` for a row-major `rows × x.len()` matrix.
#[inline]
fn matvec_into(m: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(x.len())) {
        *o += dot(row, x);
    }
}

/// `out[i] += Σ_o m[o, i] · g[o]`
#[inline]
fn matvec_t_into(m: &[f64], g: &[f64], out: &mut [f64]) {
    for (row, &go) in m.chunks_exact(out.len()).zip(g) {
        if go != 0.0 {
            axpy(out, go, row);
        }
    }
}

/// `grad[o, i] += g[o] · x[i]`
#[inline]
fn outer_into(grad: &mut [f64], g: &[f64], x: &[f64]) {
    for (row, &go) in grad.chunks_exact_mut(x.len()).zip(g) {
        if go != 0.0 {
            axpy(row, go, x);
        }
    }
}

fn position_features(y: usize, x: usize, h: usize, w: usize) -> [f64; POS_FEATURES] {
    let u = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
    let v = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
    let pi = core::f64::consts::PI;
    [u, v, libm::sin(pi * u), libm::sin(pi * v)]
}

fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let a = core::f64::consts::PI * t;
    [t, libm::sin(a), libm::cos(a)]
}

impl ToyDenoiser {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let cin = config.input_channels() as f64;
        let h = config.hidden as f64;
        let mut fill = |range: &Range<usize>, std: f64, params: &mut [f64]| {
            for p in &mut params[range.clone()] {
                let n: f64 = StandardNormal.sample(&mut rng);
                *p = n * std;
            }
        };
        fill(&layout.w1, libm::sqrt(1.0 / cin), &mut params);
        fill(&layout.wt, 0.5, &mut params);
        fill(&layout.down1, libm::sqrt(1.0 / cin), &mut params);
        fill(&layout.k2, libm::sqrt(1.0 / (TAPS as f64 * h)), &mut params);
        fill(&layout.w3, 0.5 * libm::sqrt(1.0 / h), &mut params);
        fill(&layout.down3, libm::sqrt(1.0 / h), &mut params);
        params[layout.skip.start] = 1.0;
        // up-projections start at zero so adapters begin as the identity
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from saved parameters.
    pub fn from_params(config: ToyConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::BufferLength {
                expected: layout.total,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("toy parameters".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    fn matrix(&self, r: &Range<usize>, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, self.slice(r).to_vec()).expect("layout sizes")
    }

    /// First 1×1 map and its adapter.
    pub fn input_projection(&self) -> (Matrix, Option<LowRankAdapter>) {
        let c = &self.config;
        let w = self.matrix(&self.layout.w1, c.hidden, c.input_channels());
        (w, self.adapter(&self.layout.down1, &self.layout.up1, c.input_channels(), c.hidden))
    }

    /// Last 1×1 map and its adapter.
    pub fn output_projection(&self) -> (Matrix, Option<LowRankAdapter>) {
        let c = &self.config;
        let w = self.matrix(&self.layout.w3, c.latent_channels, c.hidden);
        (w, self.adapter(&self.layout.down3, &self.layout.up3, c.hidden, c.latent_channels))
    }

    fn adapter(&self, down: &Range<usize>, up: &Range<usize>, base_in: usize, base_out: usize) -> Option<LowRankAdapter> {
        let r = self.config.rank;
        (r > 0).then(|| {
            LowRankAdapter::new(self.matrix(down, r, base_in), self.matrix(up, base_out, r), self.config.lora_scale)
                .expect("layout sizes")
        })
    }

    /// Copy with adapters folded into the base maps and reset to zero.
    pub fn merged(&self) -> Result<ToyDenoiser> {
        let mut out = self.clone();
        if self.config.rank == 0 {
            return Ok(out);
        }
        let lay = &self.layout;
        for (w, up, (base, adapter)) in [
            (&lay.w1, &lay.up1, self.input_projection()),
            (&lay.w3, &lay.up3, self.output_projection()),
        ] {
            let folded = apply_adapter(&base, adapter.as_ref().expect("rank > 0"))?;
            out.params[w.clone()].copy_from_slice(folded.data());
            out.params[up.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(out)
    }

    /// Adds Gaussian noise with standard deviation `std` to every adapter
    /// parameter.
    pub fn perturb_adapters(&mut self, rng: &mut impl rand::Rng, std: f64) {
        let ranges: Vec<Range<usize>> = self.layout.adapter_ranges().iter().map(|r| (*r).clone()).collect();
        for r in ranges {
            for p in &mut self.params[r] {
                let n: f64 = StandardNormal.sample(rng);
                *p += n * std;
            }
        }
    }

    fn check_inputs(&self, x_t: &LatentTensor, condition: &Condition) -> Result<()> {
        let c = &self.config;
        if x_t.channels() != c.latent_channels {
            return Err(Error::Shape {
                left: format!("x_t {:?}", x_t.shape()),
                right: format!("{} latent channels", c.latent_channels),
            });
        }
        let cond = &condition.latent;
        if cond.channels() != c.cond_channels || (cond.height(), cond.width()) != (x_t.height(), x_t.width()) {
            return Err(Error::Shape {
                left: format!("condition {:?}", cond.shape()),
                right: format!("({}, {}, {})", c.cond_channels, x_t.height(), x_t.width()),
            });
        }
        Ok(())
    }

    fn forward(&self, x_t: &LatentTensor, t: f64, condition: &Condition) -> Result<(LatentTensor, Cache)> {
        self.check_inputs(x_t, condition)?;
        let cfg = &self.config;
        let (hgt, wid) = (x_t.height(), x_t.width());
        let npos = hgt * wid;
        let (cin, hid, lat, r, s) = (cfg.input_channels(), cfg.hidden, cfg.latent_channels, cfg.rank, cfg.lora_scale);
        let lay = &self.layout;

        let mut input = vec![0.0; npos * cin];
        for (c, plane) in x_t.values().chunks_exact(npos).enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                input[p * cin + c] = v;
            }
        }
        for (c, plane) in condition.latent.values().chunks_exact(npos).enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                input[p * cin + lat + c] = v;
            }
        }
        let pos0 = lat + cfg.cond_channels;
        for y in 0..hgt {
            for x in 0..wid {
                let p = y * wid + x;
                input[p * cin + pos0..(p + 1) * cin].copy_from_slice(&position_features(y, x, hgt, wid));
            }
        }

        let phi = time_features(t);
        let mut bias1 = self.slice(&lay.b1).to_vec();
        matvec_into(self.slice(&lay.wt), &phi, &mut bias1);

        let mut a1 = vec![0.0; npos * r];
        let mut u1 = vec![0.0; npos * hid];
        let mut h1 = vec![0.0; npos * hid];
        for p in 0..npos {
            let x = &input[p * cin..(p + 1) * cin];
            let u = &mut u1[p * hid..(p + 1) * hid];
            u.copy_from_slice(&bias1);
            matvec_into(self.slice(&lay.w1), x, u);
            if r > 0 {
                let a = &mut a1[p * r..(p + 1) * r];
                matvec_into(self.slice(&lay.down1), x, a);
                let mut lifted = vec![0.0; hid];
                matvec_into(self.slice(&lay.up1), a, &mut lifted);
                axpy(u, s, &lifted);
            }
            for (h, &uv) in h1[p * hid..(p + 1) * hid].iter_mut().zip(u.iter()) {
                *h = silu(uv);
            }
        }

        let k2 = self.slice(&lay.k2);
        let mut u2 = vec![0.0; npos * hid];
        let mut h2 = vec![0.0; npos * hid];
        for y in 0..hgt {
            for x in 0..wid {
                let p = y * wid + x;
                let u = &mut u2[p * hid..(p + 1) * hid];
                u.copy_from_slice(self.slice(&lay.b2));
                for (tap, (ny, nx)) in neighbors(y, x, hgt, wid) {
                    let q = ny * wid + nx;
                    matvec_into(&k2[tap * hid * hid..(tap + 1) * hid * hid], &h1[q * hid..(q + 1) * hid], u);
                }
                for (h, &uv) in h2[p * hid..(p + 1) * hid].iter_mut().zip(u.iter()) {
                    *h = silu(uv);
                }
            }
        }

        let g = self.slice(&lay.skip);
        let gain = g[0] + dot(&g[1..], &phi);
        let mut a3 = vec![0.0; npos * r];
        let mut out = LatentTensor::zeros(lat, hgt, wid);
        let mut o_pos = vec![0.0; lat];
        for p in 0..npos {
            let h = &h2[p * hid..(p + 1) * hid];
            o_pos.copy_from_slice(self.slice(&lay.b3));
            matvec_into(self.slice(&lay.w3), h, &mut o_pos);
            if r > 0 {
                let a = &mut a3[p * r..(p + 1) * r];
                matvec_into(self.slice(&lay.down3), h, a);
                let mut lifted = vec![0.0; lat];
                matvec_into(self.slice(&lay.up3), a, &mut lifted);
                axpy(&mut o_pos, s, &lifted);
            }
            axpy(&mut o_pos, gain, &input[p * cin..p * cin + lat]);
            let vals = out.values_mut();
            for (c, &v) in o_pos.iter().enumerate() {
                vals[c * npos + p] = v;
            }
        }

        Ok((
            out,
            Cache {
                height: hgt,
                width: wid,
                phi,
                input,
                a1,
                u1,
                h1,
                u2,
                h2,
                a3,
            },
        ))
    }

    fn backward_cached(&self, cache: &Cache, grad_out: &LatentTensor) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let lay = &self.layout;
        let (hgt, wid) = (cache.height, cache.width);
        let npos = hgt * wid;
        if grad_out.shape() != (cfg.latent_channels, hgt, wid) {
            return Err(Error::Shape {
                left: format!("grad {:?}", grad_out.shape()),
                right: format!("({}, {hgt}, {wid})", cfg.latent_channels),
            });
        }
        let (cin, hid, lat, r, s) = (cfg.input_channels(), cfg.hidden, cfg.latent_channels, cfg.rank, cfg.lora_scale);
        let base = cfg.train_base;
        let mut grad = vec![0.0; lay.total];

        let mut g_pm = vec![0.0; npos * lat];
        for (c, plane) in grad_out.values().chunks_exact(npos).enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                g_pm[p * lat + c] = v;
            }
        }

        if base {
            let gx: f64 = (0..npos).map(|p| dot(&g_pm[p * lat..(p + 1) * lat], &cache.input[p * cin..p * cin + lat])).sum();
            let gs = &mut grad[lay.skip.clone()];
            gs[0] += gx;
            axpy(&mut gs[1..], gx, &cache.phi);
        }

        // output projection
        let mut du2 = vec![0.0; npos * hid];
        let mut da = vec![0.0; r];
        for p in 0..npos {
            let g = &g_pm[p * lat..(p + 1) * lat];
            let h = &cache.h2[p * hid..(p + 1) * hid];
            let dh = &mut du2[p * hid..(p + 1) * hid];
            if base {
                axpy(&mut grad[lay.b3.clone()], 1.0, g);
                outer_into(&mut grad[lay.w3.clone()], g, h);
            }
            matvec_t_into(self.slice(&lay.w3), g, dh);
            if r > 0 {
                let a = &cache.a3[p * r..(p + 1) * r];
                // d up3[o, k] = s·g[o]·a[k]
                for (row, &go) in grad[lay.up3.clone()].chunks_exact_mut(r).zip(g) {
                    axpy(row, s * go, a);
                }
                da.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_into(self.slice(&lay.up3), g, &mut da);
                da.iter_mut().for_each(|v| *v *= s);
                outer_into(&mut grad[lay.down3.clone()], &da, h);
                matvec_t_into(self.slice(&lay.down3), &da, dh);
            }
            for (d, &u) in dh.iter_mut().zip(&cache.u2[p * hid..(p + 1) * hid]) {
                *d *= silu_grad(u);
            }
        }

        // 3×3 convolution
        let k2 = self.slice(&lay.k2);
        let mut du1 = vec![0.0; npos * hid];
        for y in 0..hgt {
            for x in 0..wid {
                let p = y * wid + x;
                let g = &du2[p * hid..(p + 1) * hid];
                if base {
                    axpy(&mut grad[lay.b2.clone()], 1.0, g);
                }
                for (tap, (ny, nx)) in neighbors(y, x, hgt, wid) {
                    let q = ny * wid + nx;
                    let kr = tap * hid * hid..(tap + 1) * hid * hid;
                    if base {
                        let start = lay.k2.start;
                        outer_into(
                            &mut grad[start + kr.start..start + kr.end],
                            g,
                            &cache.h1[q * hid..(q + 1) * hid],
                        );
                    }
                    matvec_t_into(&k2[kr], g, &mut du1[q * hid..(q + 1) * hid]);
                }
            }
        }
        for (d, &u) in du1.iter_mut().zip(&cache.u1) {
            *d *= silu_grad(u);
        }

        // input projection
        for p in 0..npos {
            let g = &du1[p * hid..(p + 1) * hid];
            let x = &cache.input[p * cin..(p + 1) * cin];
            if base {
                axpy(&mut grad[lay.b1.clone()], 1.0, g);
                outer_into(&mut grad[lay.wt.clone()], g, &cache.phi);
                outer_into(&mut grad[lay.w1.clone()], g, x);
            }
            if r > 0 {
                let a = &cache.a1[p * r..(p + 1) * r];
                for (row, &go) in grad[lay.up1.clone()].chunks_exact_mut(r).zip(g) {
                    axpy(row, s * go, a);
                }
                da.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_into(self.slice(&lay.up1), g, &mut da);
                da.iter_mut().for_each(|v| *v *= s);
                outer_into(&mut grad[lay.down1.clone()], &da, x);
            }
        }
        Ok(grad)
    }
}

/// In-bounds 3×3 neighbors as `(tap index, (y, x))`.
fn neighbors(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, (usize, usize))> {
    (0..TAPS).filter_map(move |tap| {
        let ny = y as isize + (tap / 3) as isize - 1;
        let nx = x as isize + (tap % 3) as isize - 1;
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then(|| (tap, (ny as usize, nx as usize)))
    })
}

impl DenoiserBackend for ToyDenoiser {
    fn predict(&self, x_t: &LatentTensor, t: f64, condition: &Condition) -> Result<LatentTensor> {
        self.forward(x_t, t, condition).map(|(out, _)| out)
    }
}

impl TrainableBackend for ToyDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn backward(&self, x_t: &LatentTensor, t: f64, condition: &Condition, grad_out: &LatentTensor) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(x_t, t, condition)?;
        self.backward_cached(&cache, grad_out)
    }

    fn value_and_grad(&self, x_t: &LatentTensor, t: f64, condition: &Condition, loss: &mut LossFn<'_>) -> Result<(f64, Vec<f64>)> {
        let (pred, cache) = self.forward(x_t, t, condition)?;
        let (value, grad_out) = loss(&pred)?;
        Ok((value, self.backward_cached(&cache, &grad_out)?))
    }
}
