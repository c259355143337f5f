//! Scalar abstraction for the numeric kernels.
//!
//! Scoring and vector math are generic over [`Real`] so they run on `f32` or
//! `f64` unchanged; the pipeline instantiates everything at
//! [`crate::Scalar`] (`f64`).

use num_traits::Float;

/// Floating-point scalar usable by the scoring and vector kernels.
///
/// `distribution_tolerance` is the absolute slack allowed when checking that
/// a probability distribution sums to one; it scales with the precision of
/// the type.
pub trait Real: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn distribution_tolerance() -> Self;

    fn from_f64(v: f64) -> Self;

    fn from_usize(v: usize) -> Self;
}

impl Real for f64 {
    fn distribution_tolerance() -> Self {
        1e-9
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn from_usize(v: usize) -> Self {
        v as f64
    }
}

impl Real for f32 {
    fn distribution_tolerance() -> Self {
        1e-5
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn from_usize(v: usize) -> Self {
        v as f32
    }
}

/// Dot product of two equal-length slices.
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Euclidean norm.
pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine<F: Real>(a: &[F], b: &[F]) -> F {
    let denom = norm(a) * norm(b);
    if denom == F::zero() {
        F::zero()
    } else {
        dot(a, b) / denom
    }
}
