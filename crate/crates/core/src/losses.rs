//! Cross-entropy primitives on logit matrices.

use crate::tensor::Tensor;

/// Numerically stable softmax of one logit row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// `sum_i w_i * H(t_i, softmax(z_i)) / divisor` and its gradient with
/// respect to the logits. Rows with zero weight contribute nothing.
pub fn weighted_cross_entropy(logits: &Tensor, targets: &[usize], weights: &[f64], divisor: f64) -> (f64, Tensor) {
    let k = logits.row_len();
    assert_eq!(targets.len(), logits.n, "targets per row");
    assert_eq!(weights.len(), logits.n, "weights per row");
    let mut loss = 0.0;
    let mut grad = Tensor::matrix(logits.n, k, vec![0.0; logits.n * k]);
    for i in 0..logits.n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let z = logits.row(i);
        let t = targets[i];
        loss += w * (log_sum_exp(z) - z[t]);
        let p = softmax(z);
        let g = grad.row_mut(i);
        for j in 0..k {
            let onehot = if j == t { 1.0 } else { 0.0 };
            g[j] = w * (p[j] - onehot) / divisor;
        }
    }
    (loss / divisor, grad)
}

/// Mean cross-entropy over all rows.
pub fn mean_cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let w = vec![1.0; logits.n];
    weighted_cross_entropy(logits, targets, &w, logits.n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 4, 10] {
            let logits = Tensor::matrix(3, k, vec![0.7; 3 * k]);
            let (l, _) = mean_cross_entropy(&logits, &[0, 1, k - 1]);
            assert!((l - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_mask() {
        let logits = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.1, 0.2, 0.3]);
        let (_, g) = weighted_cross_entropy(&logits, &[2, 0], &[1.0, 0.0], 2.0);
        assert!(g.row(0).iter().sum::<f64>().abs() < 1e-15);
        assert!(g.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn large_logits_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let logits = Tensor::matrix(1, 2, vec![1000.0, -1000.0]);
        let (l, _) = mean_cross_entropy(&logits, &[0]);
        assert_eq!(l, 0.0);
    }
}
