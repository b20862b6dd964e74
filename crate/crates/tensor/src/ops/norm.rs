use std::sync::Arc;

use crate::parallel::for_each_chunk;
use crate::tape::{Backward, Var};
use crate::Tensor;

pub const NORM_EPS: f64 = 1e-5;
/// Instance norm feeds AdaIN, whose output statistics must track the style
/// closely even on 2×2 maps, so its epsilon is much smaller.
pub const INSTANCE_NORM_EPS: f64 = 1e-10;

/// Per-channel statistics of a batch-norm forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

fn layout(x: &Tensor) -> (usize, usize, usize) {
    let s = x.shape();
    assert!(s.len() >= 2, "normalisation expects [B, C, ...]");
    let b = s[0];
    let c = s[1];
    let spatial = s[2..].iter().product::<usize>();
    (b, c, spatial)
}

/// Batch statistics of `x` [B, C, ...] over batch and spatial axes.
pub fn channel_stats(x: &Tensor) -> ChannelStats {
    let (b, c, sp) = layout(x);
    let n = (b * sp) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..b {
        for (ch, row) in x.sample(s).chunks(sp).enumerate() {
            mean[ch] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for s in 0..b {
        for (ch, row) in x.sample(s).chunks(sp).enumerate() {
            let m = mean[ch];
            var[ch] += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    ChannelStats {
        mean,
        var,
        count: b * sp,
    }
}

struct BatchNormTrainBackward {
    xhat: Arc<Tensor>,
    inv_std: Vec<f64>,
    gamma: Arc<Tensor>,
}

impl Backward for BatchNormTrainBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, c, sp) = layout(dy);
        let n = (b * sp) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for s in 0..b {
            let xs = self.xhat.sample(s);
            for (ch, row) in dy.sample(s).chunks(sp).enumerate() {
                let xr = &xs[ch * sp..(ch + 1) * sp];
                sum_dy[ch] += row.iter().sum::<f64>();
                sum_dy_xhat[ch] += row.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>();
            }
        }
        let gamma = self.gamma.data();
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; dy.numel()];
            for_each_chunk(&mut dx, c * sp, |s, out| {
                let xs = self.xhat.sample(s);
                let gs = dy.sample(s);
                for ch in 0..c {
                    let k = gamma[ch] * self.inv_std[ch] / n;
                    let (sd, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
                    for i in ch * sp..(ch + 1) * sp {
                        out[i] = k * (n * gs[i] - sd - xs[i] * sdx);
                    }
                }
            });
            Tensor::new(dy.shape(), dx)
        });
        vec![
            dx,
            needs[1].then(|| Tensor::new(&[c], sum_dy_xhat.clone())),
            needs[2].then(|| Tensor::new(&[c], sum_dy.clone())),
        ]
    }
}

fn normalize_with(x: &Tensor, mean: &[f64], inv_std: &[f64]) -> Tensor {
    let (_, c, sp) = layout(x);
    let mut out = x.clone();
    for_each_chunk(out.data_mut(), c * sp, |_, o| {
        for ch in 0..c {
            let (m, k) = (mean[ch], inv_std[ch]);
            o[ch * sp..(ch + 1) * sp]
                .iter_mut()
                .for_each(|v| *v = (*v - m) * k);
        }
    });
    out
}

fn affine(xhat: &Tensor, gamma: &[f64], beta: &[f64]) -> Tensor {
    let (_, c, sp) = layout(xhat);
    let mut out = xhat.clone();
    for_each_chunk(out.data_mut(), c * sp, |_, o| {
        for ch in 0..c {
            let (g, b) = (gamma[ch], beta[ch]);
            o[ch * sp..(ch + 1) * sp]
                .iter_mut()
                .for_each(|v| *v = *v * g + b);
        }
    });
    out
}

/// Batch normalisation using the statistics of the current batch. Returns
/// the output and the statistics used.
pub fn batch_norm_train<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>) -> (Var<'t>, ChannelStats) {
    let xv = x.value();
    let stats = channel_stats(&xv);
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let xhat = Arc::new(normalize_with(&xv, &stats.mean, &inv_std));
    let gv = gamma.value();
    let y = affine(&xhat, gv.data(), beta.value().data());
    let out = x.tape().record(y, &[x, gamma, beta], || {
        Box::new(BatchNormTrainBackward {
            xhat,
            inv_std,
            gamma: gv,
        })
    });
    (out, stats)
}

struct BatchNormEvalBackward {
    xhat: Arc<Tensor>,
    inv_std: Vec<f64>,
    gamma: Arc<Tensor>,
}

impl Backward for BatchNormEvalBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, c, sp) = layout(dy);
        let gamma = self.gamma.data();
        let dx = needs[0].then(|| {
            let mut dx = dy.clone();
            for_each_chunk(dx.data_mut(), c * sp, |_, o| {
                for ch in 0..c {
                    let k = gamma[ch] * self.inv_std[ch];
                    o[ch * sp..(ch + 1) * sp].iter_mut().for_each(|v| *v *= k);
                }
            });
            dx
        });
        let mut dg = vec![0.0; c];
        let mut db = vec![0.0; c];
        for s in 0..b {
            let xs = self.xhat.sample(s);
            for (ch, row) in dy.sample(s).chunks(sp).enumerate() {
                db[ch] += row.iter().sum::<f64>();
                dg[ch] += row
                    .iter()
                    .zip(&xs[ch * sp..(ch + 1) * sp])
                    .map(|(g, x)| g * x)
                    .sum::<f64>();
            }
        }
        vec![
            dx,
            needs[1].then(|| Tensor::new(&[c], dg)),
            needs[2].then(|| Tensor::new(&[c], db)),
        ]
    }
}

/// Batch normalisation with fixed (running) statistics.
pub fn batch_norm_eval<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    mean: &[f64],
    var: &[f64],
) -> Var<'t> {
    let xv = x.value();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let xhat = Arc::new(normalize_with(&xv, mean, &inv_std));
    let gv = gamma.value();
    let y = affine(&xhat, gv.data(), beta.value().data());
    x.tape().record(y, &[x, gamma, beta], || {
        Box::new(BatchNormEvalBackward {
            xhat,
            inv_std,
            gamma: gv,
        })
    })
}

struct InstanceNormBackward {
    xhat: Arc<Tensor>,
    inv_std: Vec<f64>,
}

impl Backward for InstanceNormBackward {
    fn backward(&self, dy: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (_, c, sp) = layout(dy);
        let n = sp as f64;
        let mut dx = vec![0.0; dy.numel()];
        for_each_chunk(&mut dx, c * sp, |s, out| {
            let xs = self.xhat.sample(s);
            let gs = dy.sample(s);
            for ch in 0..c {
                let r = ch * sp..(ch + 1) * sp;
                let sd: f64 = gs[r.clone()].iter().sum();
                let sdx: f64 = gs[r.clone()].iter().zip(&xs[r.clone()]).map(|(g, x)| g * x).sum();
                let k = self.inv_std[s * c + ch] / n;
                for i in r {
                    out[i] = k * (n * gs[i] - sd - xs[i] * sdx);
                }
            }
        });
        vec![Some(Tensor::new(dy.shape(), dx))]
    }
}

/// Normalises every (sample, channel) map to zero mean and unit variance.
pub fn instance_norm(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let (b, c, sp) = layout(&xv);
    let n = sp as f64;
    let mut inv_std = vec![0.0; b * c];
    let mut xhat = (*xv).clone();
    for (idx, row) in xhat.data_mut().chunks_mut(sp).enumerate() {
        let m = row.iter().sum::<f64>() / n;
        let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let k = 1.0 / (v + INSTANCE_NORM_EPS).sqrt();
        inv_std[idx] = k;
        row.iter_mut().for_each(|x| *x = (*x - m) * k);
    }
    let xhat = Arc::new(xhat);
    x.tape().record_arc(xhat.clone(), &[x], move || {
        Box::new(InstanceNormBackward { xhat, inv_std })
    })
}

struct ChannelAffineBackward {
    x: Arc<Tensor>,
    style: Arc<Tensor>,
}

impl Backward for ChannelAffineBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, c, sp) = layout(dy);
        let st = self.style.data();
        let dx = needs[0].then(|| {
            let mut dx = dy.clone();
            for_each_chunk(dx.data_mut(), c * sp, |s, o| {
                for ch in 0..c {
                    let k = st[s * 2 * c + ch];
                    o[ch * sp..(ch + 1) * sp].iter_mut().for_each(|v| *v *= k);
                }
            });
            dx
        });
        let ds = needs[1].then(|| {
            let mut g = vec![0.0; b * 2 * c];
            for s in 0..b {
                let xs = self.x.sample(s);
                for (ch, row) in dy.sample(s).chunks(sp).enumerate() {
                    g[s * 2 * c + ch] = row
                        .iter()
                        .zip(&xs[ch * sp..(ch + 1) * sp])
                        .map(|(a, b)| a * b)
                        .sum();
                    g[s * 2 * c + c + ch] = row.iter().sum();
                }
            }
            Tensor::new(&[b, 2 * c], g)
        });
        vec![dx, ds]
    }
}

/// Per-sample, per-channel affine map: `style` is [B, 2C] holding the
/// scales in its first `C` columns and the shifts in the rest.
pub fn channel_affine<'t>(x: Var<'t>, style: Var<'t>) -> Var<'t> {
    let xv = x.value();
    let sv = style.value();
    let (b, c, sp) = layout(&xv);
    assert_eq!(sv.shape(), &[b, 2 * c], "style must be [B, 2C]");
    let mut y = (*xv).clone();
    let st = sv.data();
    for_each_chunk(y.data_mut(), c * sp, |s, o| {
        for ch in 0..c {
            let (k, t) = (st[s * 2 * c + ch], st[s * 2 * c + c + ch]);
            o[ch * sp..(ch + 1) * sp]
                .iter_mut()
                .for_each(|v| *v = *v * k + t);
        }
    });
    x.tape()
        .record(y, &[x, style], || Box::new(ChannelAffineBackward { x: xv, style: sv }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn instance_norm_zero_mean_unit_variance() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4, 2, 2], |i| (i * i % 17) as f64));
        let y = instance_norm(x).to_tensor();
        for row in y.data().chunks(16) {
            let m: f64 = row.iter().sum::<f64>() / 16.0;
            let v: f64 = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_stats_are_per_channel() {
        let x = Tensor::new(&[2, 2, 1], vec![1.0, 10.0, 3.0, 30.0]);
        let s = channel_stats(&x);
        assert_eq!(s.mean, vec![2.0, 20.0]);
        assert_eq!(s.var, vec![1.0, 100.0]);
    }
}
