use std::sync::Arc;

use crate::tape::{Backward, Var};
use crate::Tensor;

fn as_matrix(w: &Tensor) -> (usize, usize) {
    let rows = w.shape()[0];
    (rows, w.numel() / rows)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
}

/// `W v` for `W` viewed as [rows, cols].
pub fn mat_vec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = as_matrix(w);
    w.data()
        .chunks(cols)
        .take(rows)
        .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Wᵀ u` for `W` viewed as [rows, cols].
pub fn mat_t_vec(w: &Tensor, u: &[f64]) -> Vec<f64> {
    let (_, cols) = as_matrix(w);
    let mut out = vec![0.0; cols];
    for (r, &ur) in w.data().chunks(cols).zip(u) {
        out.iter_mut().zip(r).for_each(|(o, a)| *o += a * ur);
    }
    out
}

/// Result of power iteration on a weight viewed as a matrix.
#[derive(Clone, Debug)]
pub struct SingularEstimate {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
}

/// Runs `iters` power-iteration steps from the left-vector estimate `u`.
pub fn power_iteration(w: &Tensor, u: &[f64], iters: usize) -> SingularEstimate {
    let (rows, _) = as_matrix(w);
    assert_eq!(u.len(), rows, "power iteration: u has wrong length");
    let mut u = u.to_vec();
    normalize(&mut u);
    let mut v = mat_t_vec(w, &u);
    normalize(&mut v);
    for _ in 0..iters {
        v = mat_t_vec(w, &u);
        normalize(&mut v);
        u = mat_vec(w, &v);
        normalize(&mut u);
    }
    let sigma = u.iter().zip(mat_vec(w, &v)).map(|(a, b)| a * b).sum();
    SingularEstimate { u, v, sigma }
}

struct SpectralBackward {
    w: Arc<Tensor>,
    u: Vec<f64>,
    v: Vec<f64>,
    sigma: f64,
}

impl Backward for SpectralBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let cols = self.v.len();
        let coupling = grad.dot(&self.w) / (self.sigma * self.sigma);
        let mut g = grad.scale(1.0 / self.sigma);
        for (r, row) in g.data_mut().chunks_mut(cols).enumerate() {
            let ur = self.u[r] * coupling;
            row.iter_mut().zip(&self.v).for_each(|(x, vc)| *x -= ur * vc);
        }
        vec![Some(g)]
    }
}

/// `W / σ` with `σ = uᵀ W v`; `u` and `v` are treated as constants.
pub fn spectral_normalize<'t>(w: Var<'t>, u: &[f64], v: &[f64]) -> Var<'t> {
    let wv = w.value();
    let sigma: f64 = u.iter().zip(mat_vec(&wv, v)).map(|(a, b)| a * b).sum();
    assert!(sigma.abs() > 1e-12, "spectral norm estimate collapsed to zero");
    let y = wv.scale(1.0 / sigma);
    let (u, v) = (u.to_vec(), v.to_vec());
    w.tape().record(y, &[w], move || {
        Box::new(SpectralBackward {
            w: wv,
            u,
            v,
            sigma,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_finds_top_singular_value() {
        let w = Tensor::new(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]);
        let est = power_iteration(&w, &[1.0, 1.0], 50);
        assert!((est.sigma - 3.0).abs() < 1e-9);
    }
}
