//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Tensor;

pub fn normal<R: Rng + ?Sized>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(mean, std).expect("finite standard deviation");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Uniform in ±1/sqrt(fan_in), the usual default for conv and linear layers.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}
