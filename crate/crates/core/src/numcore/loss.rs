use super::kernels::log_sum_exp;
use super::real::Real;
use super::tensor::Tensor;
use super::NumError;

/// Masked softmax cross-entropy over `[T × V]` logits.
///
/// Returns `(Σ_{mask=1} −log softmax(logits_t)[target_t], number of mask=1 rows)`.
/// An all-zero mask yields `(0, 0)`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize], mask: &[u8]) -> Result<(T, usize), NumError> {
    let v = logits.cols();
    let rows = logits.rows();
    if targets.len() != rows || mask.len() != rows {
        return Err(NumError::ShapeMismatch {
            context: "softmax_cross_entropy",
            expected: vec![rows],
            got: vec![targets.len(), mask.len()],
        });
    }
    let mut sum = T::zero();
    let mut count = 0;
    for (t, (&target, &m)) in targets.iter().zip(mask).enumerate() {
        if m == 0 {
            continue;
        }
        if target >= v {
            return Err(NumError::Config(format!("target {target} at position {t} outside vocabulary {v}")));
        }
        let row = logits.row(t);
        sum += log_sum_exp(row) - row[target];
        count += 1;
    }
    Ok((sum, count))
}
