use rand::Rng;

use crate::tensor::Tensor;

/// `fan_in×fan_out` weight drawn from `U(−1/√fan_in, 1/√fan_in)`.
pub fn uniform_weight<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_op(vec![fan_in, fan_out], data)
}

pub fn constant(len: usize, value: f64) -> Tensor {
    Tensor::from_op(vec![len], vec![value; len])
}
