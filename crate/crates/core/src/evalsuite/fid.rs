//! Fréchet distance between Gaussian fits of two feature sets.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FidError {
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two samples per set")]
    TooFewSamples,
    #[error("matrix square root hit eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    /// A ridge of 1e-6 was added to the covariances (too few samples for full rank).
    pub ridge_added: bool,
}

pub const RIDGE: f64 = 1e-6;

/// Dense symmetric matrix, row-major `n × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub a: Vec<f64>,
}

impl SymMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn matmul(&self, o: &SymMatrix) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let v = self.at(i, k);
                for j in 0..n {
                    out[i * n + j] += v * o.at(k, j);
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition. Returns (eigenvalues, eigenvectors as columns, row-major).
pub fn sym_eigen(m: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.n;
    let mut a = m.a.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn clamp_eig(l: f64, scale: f64) -> Result<f64, FidError> {
    if l < -1e-8 * scale.max(1.0) {
        Err(FidError::NegativeEigenvalue(l))
    } else {
        Ok(l.max(0.0))
    }
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &SymMatrix) -> Result<SymMatrix, FidError> {
    let n = m.n;
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let roots: Vec<f64> = vals.iter().map(|&l| clamp_eig(l, scale).map(f64::sqrt)).collect::<Result<_, _>>()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k]).sum();
        }
    }
    Ok(SymMatrix { n, a: out })
}

/// Mean and unbiased covariance of row vectors.
pub fn mean_cov(x: &[Vec<f64>]) -> (Vec<f64>, SymMatrix) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mu = vec![0.0; d];
    for r in x {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut c = vec![0.0; d * d];
    for r in x {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                c[i * d + j] += di * (r[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = c[i * d + j] / (n - 1.0);
            c[i * d + j] = v;
            c[j * d + i] = v;
        }
    }
    (mu, SymMatrix { n: d, a: c })
}

/// Fréchet distance between Gaussians (mu_a, s_a) and (mu_b, s_b).
/// Tr((s_a s_b)^{1/2}) is evaluated as Tr((A s_b A)^{1/2}) with A = s_a^{1/2}.
pub fn frechet_distance(mu_a: &[f64], s_a: &SymMatrix, mu_b: &[f64], s_b: &SymMatrix) -> Result<f64, FidError> {
    let d = mu_a.len();
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    let ra = sqrtm_psd(s_a)?;
    let tmp = SymMatrix { n: d, a: ra.matmul(s_b) };
    let mut m = SymMatrix { n: d, a: tmp.matmul(&ra) };
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m.a[i * d + j] + m.a[j * d + i]);
            m.a[i * d + j] = v;
            m.a[j * d + i] = v;
        }
    }
    let (vals, _) = sym_eigen(&m);
    let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut tr_sqrt = 0.0;
    for l in vals {
        tr_sqrt += clamp_eig(l, scale)?.sqrt();
    }
    Ok((mean_term + s_a.trace() + s_b.trace() - 2.0 * tr_sqrt).max(0.0))
}

pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FidResult, FidError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(FidError::TooFewSamples);
    }
    let (da, db) = (a[0].len(), b[0].len());
    if da != db || a.iter().chain(b).any(|r| r.len() != da) {
        return Err(FidError::DimensionMismatch(da, db));
    }
    let (mu_a, mut s_a) = mean_cov(a);
    let (mu_b, mut s_b) = mean_cov(b);
    let ridge_added = a.len() <= da || b.len() <= da;
    if ridge_added {
        for i in 0..da {
            s_a.a[i * da + i] += RIDGE;
            s_b.a[i * da + i] += RIDGE;
        }
    }
    Ok(FidResult { value: frechet_distance(&mu_a, &s_a, &mu_b, &s_b)?, ridge_added })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + if j == 0 { shift } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = gaussian(200, 6, 0.0, 1);
        assert!(fid(&a, &a).unwrap().value.abs() < 1e-8);
    }

    #[test]
    fn jacobi_reconstructs() {
        let x = gaussian(30, 5, 0.0, 3);
        let (_, c) = mean_cov(&x);
        let (vals, vecs) = sym_eigen(&c);
        let n = c.n;
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                assert!((r - c.at(i, j)).abs() < 1e-12);
            }
        }
        let s = sqrtm_psd(&c).unwrap();
        let sq = s.matmul(&s);
        for (a, b) in sq.iter().zip(&c.a) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_flag_when_underdetermined() {
        let a = gaussian(5, 8, 0.0, 1);
        let b = gaussian(5, 8, 0.0, 2);
        assert!(fid(&a, &b).unwrap().ridge_added);
    }

    #[test]
    fn dimension_mismatch() {
        let a = gaussian(5, 3, 0.0, 1);
        let b = gaussian(5, 4, 0.0, 2);
        assert_eq!(fid(&a, &b), Err(FidError::DimensionMismatch(3, 4)));
    }
}
