use lunggan_tensor::Tensor;

use crate::error::{Error, Result};

/// Spherical interpolation; falls back to `lerp` for nearly parallel inputs.
pub fn slerp(z1: &Tensor, z2: &Tensor, t: f64) -> Result<Tensor> {
    if z1.shape() != z2.shape() {
        return Err(Error::Shape(format!("slerp of {:?} and {:?}", z1.shape(), z2.shape())));
    }
    let (n1, n2) = (z1.norm(), z2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Argument("slerp of a zero vector".into()));
    }
    if t == 0.0 {
        return Ok(z1.clone());
    }
    if t == 1.0 {
        return Ok(z2.clone());
    }
    let cos = (z1.dot(z2) / (n1 * n2)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega < 1e-6 {
        return lerp(z1, z2, t);
    }
    let s = omega.sin();
    let (a, b) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(z1.zip_map(z2, |x, y| a * x + b * y))
}

/// `(1 − t)·w1 + t·w2`.
pub fn lerp(w1: &Tensor, w2: &Tensor, t: f64) -> Result<Tensor> {
    if w1.shape() != w2.shape() {
        return Err(Error::Shape(format!("lerp of {:?} and {:?}", w1.shape(), w2.shape())));
    }
    Ok(w1.zip_map(w2, |x, y| (1.0 - t) * x + t * y))
}
