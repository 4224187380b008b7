use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Glorot uniform range.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot (Xavier) uniform initialization: i.i.d. draws from `[-a, a]`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "fan sizes must be positive");
    let a = glorot_bound(fan_in, fan_out);
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-a..=a)))
}
