//! Dense tensors, reverse-mode differentiation and the network primitives built on them.

mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Mode, NormStats, Var};
pub use optim::{AdamConfig, AdamState};
pub use params::{is_buffer, Bound, ParamSet, PREDICTOR_PREFIX};
pub use tensor::{DType, Real, Tensor};

/// Cosine similarity `aᵀb / (‖a‖‖b‖)`, or 0 when either vector has zero norm.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        log::warn!("cosine similarity of a zero-norm vector; returning 0");
        return T::zero();
    }
    let c = dot / (na * nb);
    c.max(-T::one()).min(T::one())
}

/// `−log softmax(logits)[target]` for a single logit vector.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], target: usize) -> crate::Result<T> {
    if target >= logits.len() {
        return Err(crate::Error::InvalidArgument {
            op: "softmax_cross_entropy",
            detail: format!("target {target} out of range for {} classes", logits.len()),
        });
    }
    Ok(kernels::log_sum_exp(logits) - logits[target])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[0.3f64, -2.0], &[0.3, -2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 5.0]), 0.0);
        let v = cosine_similarity(&[1.0f64, 1.0], &[1.0, 0.0]);
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn cross_entropy_cases() {
        let u = softmax_cross_entropy(&[0.7f64; 4], 2).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        let l = softmax_cross_entropy(&[1.0f64, 0.0], 0).unwrap();
        let want = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
        assert!(softmax_cross_entropy(&[1e4f64, 0.0, 0.0], 0).unwrap() < 1e-12);
        assert!(softmax_cross_entropy(&[0.0f64; 3], 3).is_err());
    }
}
