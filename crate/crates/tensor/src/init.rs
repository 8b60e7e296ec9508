use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::{dims2, Tensor};

/// Glorot/Xavier uniform fill in `±sqrt(6 / (fan_in + fan_out))`.
///
/// Fans come from the matrix view of `shape`: rows are the input fan and
/// columns the output fan. A 1-D shape `[n]` uses `n` for both.
pub fn xavier_uniform<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        _ => dims2(shape),
    };
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Seeded convenience wrapper around [`xavier_uniform`].
pub fn xavier_init<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    xavier_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}
