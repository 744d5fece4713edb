//! Nearest-codebook-entry quantization.

use crate::numcore::Real;

/// Index of the nearest row of `codebook` (`k × n_z`) to `z`; ties go to the lowest index.
pub fn nearest<T: Real>(z: &[T], codebook: &[T], n_z: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in codebook.chunks_exact(n_z).enumerate() {
        let d: f64 = z.iter().zip(e).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Quantizes `rows × n_z` latents. Returns indices and the gathered codebook rows.
pub fn quantize<T: Real>(latents: &[T], codebook: &[T], n_z: usize) -> (Vec<usize>, Vec<T>) {
    let mut idx = Vec::with_capacity(latents.len() / n_z);
    let mut q = Vec::with_capacity(latents.len());
    for z in latents.chunks_exact(n_z) {
        let k = nearest(z, codebook, n_z);
        idx.push(k);
        q.extend_from_slice(&codebook[k * n_z..(k + 1) * n_z]);
    }
    (idx, q)
}

/// Codebook and commitment terms: mean ‖sg(ze) − e‖² and β·mean ‖ze − sg(e)‖².
/// Both are taken per element, so they share one value before weighting.
pub fn vq_loss_terms<T: Real>(latents: &[T], quantized: &[T], beta: f64) -> (f64, f64) {
    let mse: f64 =
        latents.iter().zip(quantized).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / latents.len() as f64;
    (mse, beta * mse)
}

/// Usage counts per codebook entry and their entropy in nats.
pub fn usage(indices: &[usize], k: usize) -> (Vec<usize>, f64) {
    let mut counts = vec![0usize; k];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len().max(1) as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    (counts, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use rand::Rng as _;

    #[test]
    fn nearest_by_inspection() {
        let cb = [0.0, 0.0, 1.0, 1.0];
        let (idx, q) = quantize(&[0.9f64, 0.8], &cb, 2);
        assert_eq!(idx, vec![1]);
        assert_eq!(q, vec![1.0, 1.0]);
    }

    #[test]
    fn ties_go_low() {
        let cb = [1.0, 0.0, 5.0, 5.0, 7.0, 7.0, -1.0, 0.0];
        assert_eq!(nearest(&[0.0f64, 0.0], &cb, 2), 0);
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = rng_from(4);
        let cb: Vec<f32> = (0..128 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f32> = (0..64 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (idx, q) = quantize(&z, &cb, 32);
        for (r, &i) in idx.iter().enumerate() {
            let zr = &z[r * 32..(r + 1) * 32];
            let dist = |k: usize| -> f64 { (0..32).map(|j| ((zr[j] - cb[k * 32 + j]) as f64).powi(2)).sum() };
            let mut best = 0;
            for k in 1..128 {
                if dist(k) < dist(best) {
                    best = k;
                }
            }
            assert_eq!(i, best);
            assert_eq!(&q[r * 32..(r + 1) * 32], &cb[best * 32..(best + 1) * 32]);
        }
    }
}
