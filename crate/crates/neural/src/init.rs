use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over a `[fan_in x fan_out]` matrix.
    Xavier,
    Uniform(f64),
}

impl Init {
    pub fn tensor<F: Real>(self, shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<F> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::from_fn(shape, |_| F::one()),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [a, b] => (*a, *b),
                    [a] => (*a, *a),
                    _ => (1, 1),
                };
                xavier_uniform(shape, fan_in, fan_out, rng)
            }
            Init::Uniform(a) => Tensor::from_fn(shape, |_| F::from_f64_lossy(rng.random_range(-a..=a))),
        }
    }
}

pub fn xavier_uniform<F: Real>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::from_f64_lossy(rng.random_range(-a..=a)))
}
