//! Dense building blocks with hand-written backward passes.
//!
//! Everything operates on row-major `T × d` matrices of `f64`. Forward
//! functions return whatever the matching backward needs as a cache struct;
//! backward functions accumulate parameter gradients in place (`+=`) and
//! return the gradient with respect to their input.

use ndarray::{s, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Mat = Array2<f64>;

pub const NORM_EPS: f64 = 1e-6;

/// Gaussian init with the given standard deviation.
pub fn randn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let normal = Normal::new(0.0, std).expect("std must be finite and positive");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

pub fn ones_row(d: usize) -> Mat {
    Array2::ones((1, d))
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
}

/// Gradient of a softmax given its output `p` and upstream gradient `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((o, &pi), &dpi) in out.iter_mut().zip(p).zip(dp) {
        *o = pi * (dpi - dot);
    }
}

pub struct RmsCache {
    x: Mat,
    inv_rms: Vec<f64>,
}

/// Row-wise RMS normalization with a learned `1 × d` gain.
pub fn rms_norm(x: &Mat, gain: &Mat) -> (Mat, RmsCache) {
    let d = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv_rms = Vec::with_capacity(x.nrows());
    let g = gain.row(0);
    for mut row in y.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        inv_rms.push(inv);
        Zip::from(&mut row).and(&g).for_each(|v, &gi| *v *= inv * gi);
    }
    (y, RmsCache { x: x.clone(), inv_rms })
}

pub fn rms_norm_backward(cache: &RmsCache, gain: &Mat, dy: &Mat, dgain: &mut Mat) -> Mat {
    let d = cache.x.ncols() as f64;
    let g = gain.row(0);
    let mut dx = Mat::zeros(cache.x.raw_dim());
    for (t, &inv) in cache.inv_rms.iter().enumerate() {
        let x = cache.x.row(t);
        let dyr = dy.row(t);
        let mut dgain_row = dgain.row_mut(0);
        Zip::from(&mut dgain_row)
            .and(&dyr)
            .and(&x)
            .for_each(|dg, &dyv, &xv| *dg += dyv * xv * inv);
        // u = g ⊙ dy; dx = inv·u − x·inv³/d · Σ(u ⊙ x)
        let ux: f64 = (0..x.len()).map(|i| g[i] * dyr[i] * x[i]).sum();
        let coef = inv * inv * inv * ux / d;
        let mut dxr = dx.row_mut(t);
        for i in 0..x.len() {
            dxr[i] = inv * g[i] * dyr[i] - coef * x[i];
        }
    }
    dx
}

/// Square projection weights of one multi-head self-attention sublayer.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

impl AttentionWeights {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        AttentionWeights {
            wq: randn(rng, d, d, std),
            wk: randn(rng, d, d, std),
            wv: randn(rng, d, d, std),
            wo: randn(rng, d, d, std * 0.5),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AttentionWeights {
            wq: Mat::zeros(self.wq.raw_dim()),
            wk: Mat::zeros(self.wk.raw_dim()),
            wv: Mat::zeros(self.wv.raw_dim()),
            wo: Mat::zeros(self.wo.raw_dim()),
        }
    }
}

pub struct AttentionCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctx: Mat,
}

pub fn attention(w: &AttentionWeights, x: &Mat, n_heads: usize, causal: bool) -> (Mat, AttentionCache) {
    let t = x.nrows();
    let d = x.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&w.wq);
    let k = x.dot(&w.wk);
    let v = x.dot(&w.wv);
    let mut ctx = Mat::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        if causal {
            for i in 0..t {
                for j in (i + 1)..t {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = ctx.dot(&w.wo);
    (out, AttentionCache { x: x.clone(), q, k, v, probs, ctx })
}

pub fn attention_backward(
    w: &AttentionWeights,
    cache: &AttentionCache,
    dy: &Mat,
    grads: &mut AttentionWeights,
) -> Mat {
    let d = cache.x.ncols();
    let n_heads = cache.probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    grads.wo += &cache.ctx.t().dot(dy);
    let dctx = dy.dot(&w.wo.t());
    let mut dq = Mat::zeros(cache.q.raw_dim());
    let mut dk = Mat::zeros(cache.k.raw_dim());
    let mut dv = Mat::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        let dp = dctx_h.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
        let mut ds = Mat::zeros(p.raw_dim());
        for i in 0..p.nrows() {
            softmax_backward(
                p.row(i).as_slice().expect("standard layout"),
                dp.row(i).as_slice().expect("standard layout"),
                ds.row_mut(i).as_slice_mut().expect("standard layout"),
            );
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    grads.wq += &cache.x.t().dot(&dq);
    grads.wk += &cache.x.t().dot(&dk);
    grads.wv += &cache.x.t().dot(&dv);
    let mut dx = dq.dot(&w.wq.t());
    dx += &dk.dot(&w.wk.t());
    dx += &dv.dot(&w.wv.t());
    dx
}

/// SwiGLU feed-forward network: `(silu(x·Wg) ⊙ x·Wu)·Wd`.
#[derive(Clone, Debug)]
pub struct SwiGlu {
    pub w_gate: Mat,
    pub w_up: Mat,
    pub w_down: Mat,
}

pub struct SwiGluCache {
    x: Mat,
    a: Mat,
    b: Mat,
    h: Mat,
}

impl SwiGlu {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, d_ff: usize) -> Self {
        SwiGlu {
            w_gate: randn(rng, d, d_ff, 1.0 / (d as f64).sqrt()),
            w_up: randn(rng, d, d_ff, 1.0 / (d as f64).sqrt()),
            w_down: randn(rng, d_ff, d, 0.5 / (d_ff as f64).sqrt()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SwiGlu {
            w_gate: Mat::zeros(self.w_gate.raw_dim()),
            w_up: Mat::zeros(self.w_up.raw_dim()),
            w_down: Mat::zeros(self.w_down.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Mat) -> (Mat, SwiGluCache) {
        let a = x.dot(&self.w_gate);
        let b = x.dot(&self.w_up);
        let mut h = a.mapv(silu);
        h *= &b;
        let y = h.dot(&self.w_down);
        (y, SwiGluCache { x: x.clone(), a, b, h })
    }

    pub fn backward(&self, cache: &SwiGluCache, dy: &Mat, grads: &mut SwiGlu) -> Mat {
        grads.w_down += &cache.h.t().dot(dy);
        let dh = dy.dot(&self.w_down.t());
        let mut da = dh.clone();
        Zip::from(&mut da)
            .and(&cache.a)
            .and(&cache.b)
            .for_each(|g, &a, &b| *g *= b * silu_grad(a));
        let mut db = dh;
        Zip::from(&mut db).and(&cache.a).for_each(|g, &a| *g *= silu(a));
        grads.w_gate += &cache.x.t().dot(&da);
        grads.w_up += &cache.x.t().dot(&db);
        let mut dx = da.dot(&self.w_gate.t());
        dx += &db.dot(&self.w_up.t());
        dx
    }
}

/// Log-sum-exp of a row.
pub fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sum of squares across several matrices.
pub fn sum_sq<'a>(mats: impl IntoIterator<Item = &'a Mat>) -> f64 {
    mats.into_iter().map(|m| m.iter().map(|v| v * v).sum::<f64>()).sum()
}

/// Gathers rows `idx` of `m` into a new matrix.
pub fn gather_rows(m: &Mat, idx: &[usize]) -> Mat {
    m.select(Axis(0), idx)
}
