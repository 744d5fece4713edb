//! Plain forward kernels shared by the autodiff graph and the cached decoder.

use super::real::{gemm, Layout, Real};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::f(GELU_C);
    let a = T::f(GELU_A);
    let half = T::f(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::f(GELU_C);
    let a = T::f(GELU_A);
    let half = T::f(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::f(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out[n×o] = x[n×i] · w[i×o] (+ b)`.
pub fn linear<T: Real>(x: &[T], n: usize, w: &[T], i: usize, o: usize, b: Option<&[T]>, out: &mut [T]) {
    gemm(n, i, o, T::one(), x, Layout::row_major(i), w, Layout::row_major(o), T::zero(), out, Layout::row_major(o));
    if let Some(b) = b {
        for r in 0..n {
            for (v, &bb) in out[r * o..(r + 1) * o].iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns per-row (mean, rstd).
pub fn layer_norm<T: Real>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) -> (Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let mut means = Vec::with_capacity(n);
    let mut rstds = Vec::with_capacity(n);
    let eps = T::f(LN_EPS);
    let inv_d = T::one() / T::f(d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (means, rstds)
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `log Σ exp(row)`.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// A contiguous run of rows forming one causal sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Causal multi-head attention over packed `qkv` rows (`[N × 3d]`, q|k|v).
///
/// Writes `[N × d]` into `out` and returns the softmax probabilities
/// (per segment, per head, `len × len` row-major) for the backward pass.
pub fn causal_attention<T: Real>(qkv: &[T], d: usize, heads: usize, segs: &[Segment], out: &mut [T]) -> Vec<T> {
    let dh = d / heads;
    let scale = T::one() / T::f(dh as f64).sqrt();
    let total: usize = segs.iter().map(|s| s.len * s.len * heads).sum();
    let mut probs = vec![T::zero(); total];
    let mut p_off = 0;
    for seg in segs {
        let t = seg.len;
        for h in 0..heads {
            let p = &mut probs[p_off..p_off + t * t];
            let q = Layout { offset: seg.start * 3 * d + h * dh, rs: 3 * d, cs: 1 };
            let kt = Layout { offset: seg.start * 3 * d + d + h * dh, rs: 1, cs: 3 * d };
            gemm(t, dh, t, scale, qkv, q, qkv, kt, T::zero(), p, Layout::row_major(t));
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                for v in row[i + 1..].iter_mut() {
                    *v = T::neg_infinity();
                }
                softmax_in_place(&mut row[..=i]);
                for v in row[i + 1..].iter_mut() {
                    *v = T::zero();
                }
            }
            let v = Layout { offset: seg.start * 3 * d + 2 * d + h * dh, rs: 3 * d, cs: 1 };
            let o = Layout { offset: seg.start * d + h * dh, rs: d, cs: 1 };
            gemm(t, t, dh, T::one(), p, Layout::row_major(t), qkv, v, T::zero(), out, o);
            p_off += t * t;
        }
    }
    probs
}

/// Geometry of a square-kernel 2-D convolution over NHWC tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_size(&self, h: usize) -> usize {
        (h + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// im2col for NHWC input: rows = output pixels, cols = (ky, kx, c_in).
pub fn im2col<T: Real>(x: &[T], b: usize, h: usize, w: usize, c: usize, spec: ConvSpec) -> (Vec<T>, usize, usize) {
    let ho = spec.out_size(h);
    let wo = spec.out_size(w);
    let k = spec.kernel;
    let width = k * k * c;
    let mut cols = vec![T::zero(); b * ho * wo * width];
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * width;
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(dcols: &[T], b: usize, h: usize, w: usize, c: usize, spec: ConvSpec, dx: &mut [T]) {
    let ho = spec.out_size(h);
    let wo = spec.out_size(w);
    let k = spec.kernel;
    let width = k * k * c;
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * width;
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * k + kx) * c;
                        for j in 0..c {
                            dx[dst + j] += dcols[src + j];
                        }
                    }
                }
            }
        }
    }
}
