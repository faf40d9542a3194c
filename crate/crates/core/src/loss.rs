//! Softmax cross-entropy on a single logit vector.

use crate::tensor::{Scalar, Tensor};

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits (`softmax - onehot`).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> (T, Tensor<T>) {
    let z = logits.data();
    assert!(label < z.len(), "label {label} out of range for {} classes", z.len());
    let lse = log_sum_exp(z);
    let grad = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = (v - lse).exp();
            if i == label {
                p - T::one()
            } else {
                p
            }
        })
        .collect();
    (lse - z[label], Tensor::from_parts(logits.shape().to_vec(), grad))
}

/// Loss only; same value as [`softmax_cross_entropy`].
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> T {
    let z = logits.data();
    assert!(label < z.len(), "label {label} out of range for {} classes", z.len());
    log_sum_exp(z) - z[label]
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let z = Tensor::from_vec(vec![0.0f64; 4]);
        let (l, g) = softmax_cross_entropy(&z, 2);
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert_eq!(g.data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn large_logits_stay_finite() {
        let z = Tensor::from_vec(vec![1000.0f32, -1000.0, 0.0]);
        let (l, g) = softmax_cross_entropy(&z, 1);
        assert!(l.is_finite() && g.is_finite());
        assert!((l - 2000.0).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = vec![0.3f64, -1.2, 2.0, 0.1];
        let (_, g) = softmax_cross_entropy(&Tensor::from_vec(z.clone()), 1);
        let h = 1e-6;
        for i in 0..z.len() {
            let mut up = z.clone();
            let mut dn = z.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (cross_entropy(&Tensor::from_vec(up), 1)
                - cross_entropy(&Tensor::from_vec(dn), 1))
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
