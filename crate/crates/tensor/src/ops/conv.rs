use std::sync::Arc;

use crate::kernels::{col2im, gemm, im2col, tile_rows, ConvGeometry, MatLayout};
use crate::parallel::{for_each_chunk, reduce_groups};
use crate::tape::{Backward, Var};
use crate::Tensor;

pub(crate) fn dims5(t: &Tensor) -> [usize; 5] {
    let s = t.shape();
    assert_eq!(s.len(), 5, "expected a 5-d tensor [B, C, D, H, W], got {s:?}");
    [s[0], s[1], s[2], s[3], s[4]]
}

fn check_kernel(w: &Tensor, geom: &ConvGeometry) {
    let s = w.shape();
    assert_eq!(s.len(), 5, "convolution weight must be 5-d");
    assert_eq!(&s[2..], &geom.kernel, "weight kernel does not match geometry");
}

fn strided(row_stride: usize) -> MatLayout {
    MatLayout {
        row_stride,
        col_stride: 1,
    }
}

/// Tiles output depth rows `0..rows` in chunks of `step`.
fn tiles(rows: usize, step: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..rows)
        .step_by(step.max(1))
        .map(move |r0| (r0, (r0 + step).min(rows)))
}

/// Per-thread im2col buffer, reused across calls. Contents are stale on
/// take; every user overwrites the region it reads.
struct Scratch(Vec<f64>);

thread_local! {
    static SCRATCH: std::cell::Cell<Vec<f64>> = const { std::cell::Cell::new(Vec::new()) };
}

impl Scratch {
    fn take(len: usize) -> Self {
        let mut v = SCRATCH.take();
        if v.len() < len {
            v.resize(len, 0.0);
        }
        Scratch(v)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        SCRATCH.set(std::mem::take(&mut self.0));
    }
}

impl std::ops::Deref for Scratch {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for Scratch {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Cross-correlation of `x` [B, Ci, D, H, W] with `w` [Co, Ci, kd, kh, kw].
pub fn conv3d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geom: &ConvGeometry) -> Tensor {
    let [b, ci, d, h, wd] = dims5(x);
    check_kernel(w, geom);
    let co = w.shape()[0];
    assert_eq!(w.shape()[1], ci, "conv3d: input has {ci} channels, weight expects {}", w.shape()[1]);
    let out = geom
        .conv_output([d, h, wd])
        .unwrap_or_else(|| panic!("conv3d: kernel {:?} does not fit input {:?}", geom.kernel, [d, h, wd]));
    let plane = out[1] * out[2];
    let p_out = out[0] * plane;
    let k = ci * geom.kernel_volume();
    let step = tile_rows(k, plane, out[0]);
    let mut y = vec![0.0; b * co * p_out];
    for_each_chunk(&mut y, co * p_out, |s, ys| {
        let xs = x.sample(s);
        let mut col = Scratch::take(k * step * plane);
        for (r0, r1) in tiles(out[0], step) {
            let t = (r1 - r0) * plane;
            im2col(xs, ci, [d, h, wd], geom, out, r0, r1, &mut col[..k * t]);
            gemm(
                co,
                k,
                t,
                1.0,
                w.data(),
                MatLayout::row_major(k),
                &col[..k * t],
                MatLayout::row_major(t),
                0.0,
                &mut ys[r0 * plane..],
                strided(p_out),
            );
        }
        if let Some(bias) = bias {
            for (c, row) in ys.chunks_mut(p_out).enumerate() {
                let bc = bias.data()[c];
                row.iter_mut().for_each(|v| *v += bc);
            }
        }
    });
    Tensor::new(&[b, co, out[0], out[1], out[2]], y)
}

/// Transposed convolution of `x` [B, Ci, D, H, W] with `w` [Ci, Co, kd, kh, kw].
pub fn conv_transpose3d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    geom: &ConvGeometry,
) -> Tensor {
    let [b, ci, d, h, wd] = dims5(x);
    check_kernel(w, geom);
    assert_eq!(w.shape()[0], ci, "conv_transpose3d: channel mismatch");
    let co = w.shape()[1];
    let out = geom
        .transposed_output([d, h, wd])
        .unwrap_or_else(|| panic!("conv_transpose3d: invalid geometry for input {:?}", [d, h, wd]));
    let in_plane = h * wd;
    let p_in = d * in_plane;
    let p_out: usize = out.iter().product();
    let kcols = co * geom.kernel_volume();
    let step = tile_rows(kcols, in_plane, d);
    let mut y = vec![0.0; b * co * p_out];
    for_each_chunk(&mut y, co * p_out, |s, ys| {
        let xs = x.sample(s);
        let mut col = Scratch::take(kcols * step * in_plane);
        for (r0, r1) in tiles(d, step) {
            let t = (r1 - r0) * in_plane;
            let col = &mut col[..kcols * t];
            gemm(
                kcols,
                ci,
                t,
                1.0,
                w.data(),
                MatLayout::transposed(kcols),
                &xs[r0 * in_plane..],
                strided(p_in),
                0.0,
                col,
                MatLayout::row_major(t),
            );
            col2im(col, co, out, geom, [d, h, wd], r0, r1, ys);
        }
        if let Some(bias) = bias {
            for (c, row) in ys.chunks_mut(p_out).enumerate() {
                let bc = bias.data()[c];
                row.iter_mut().for_each(|v| *v += bc);
            }
        }
    });
    Tensor::new(&[b, co, out[0], out[1], out[2]], y)
}

fn bias_grad(dy: &Tensor, channels: usize) -> Tensor {
    let b = dy.batch();
    let per = dy.per_sample() / channels;
    let mut g = vec![0.0; channels];
    for s in 0..b {
        for (c, row) in dy.sample(s).chunks(per).enumerate() {
            g[c] += row.iter().sum::<f64>();
        }
    }
    Tensor::new(&[channels], g)
}

struct Conv3dBackward {
    x: Arc<Tensor>,
    w: Arc<Tensor>,
    geom: ConvGeometry,
    has_bias: bool,
}

impl Backward for Conv3dBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = &*self.x;
        let w = &*self.w;
        let geom = &self.geom;
        let [b, ci, d, h, wd] = dims5(x);
        let co = w.shape()[0];
        let out = geom.conv_output([d, h, wd]).expect("geometry checked in forward");
        let plane = out[1] * out[2];
        let p_out = out[0] * plane;
        let k = ci * geom.kernel_volume();
        let step = tile_rows(k, plane, out[0]);

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; x.numel()];
            for_each_chunk(&mut dx, x.per_sample(), |s, dxs| {
                let dys = dy.sample(s);
                let mut col = Scratch::take(k * step * plane);
                for (r0, r1) in tiles(out[0], step) {
                    let t = (r1 - r0) * plane;
                    let col = &mut col[..k * t];
                    gemm(
                        k,
                        co,
                        t,
                        1.0,
                        w.data(),
                        MatLayout::transposed(k),
                        &dys[r0 * plane..],
                        strided(p_out),
                        0.0,
                        col,
                        MatLayout::row_major(t),
                    );
                    col2im(col, ci, [d, h, wd], geom, out, r0, r1, dxs);
                }
            });
            Tensor::new(x.shape(), dx)
        });

        let dw = needs[1].then(|| {
            let g = reduce_groups(b, co * k, |s, acc| {
                let xs = x.sample(s);
                let dys = dy.sample(s);
                let mut col = Scratch::take(k * step * plane);
                for (r0, r1) in tiles(out[0], step) {
                    let t = (r1 - r0) * plane;
                    let col = &mut col[..k * t];
                    im2col(xs, ci, [d, h, wd], geom, out, r0, r1, col);
                    gemm(
                        co,
                        t,
                        k,
                        1.0,
                        &dys[r0 * plane..],
                        strided(p_out),
                        col,
                        MatLayout::transposed(t),
                        1.0,
                        acc,
                        MatLayout::row_major(k),
                    );
                }
            });
            Tensor::new(w.shape(), g)
        });

        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| bias_grad(dy, co)));
        }
        grads
    }
}

struct ConvTranspose3dBackward {
    x: Arc<Tensor>,
    w: Arc<Tensor>,
    geom: ConvGeometry,
    has_bias: bool,
}

impl Backward for ConvTranspose3dBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = &*self.x;
        let w = &*self.w;
        let geom = &self.geom;
        let [b, ci, d, h, wd] = dims5(x);
        let co = w.shape()[1];
        let out = geom.transposed_output([d, h, wd]).expect("geometry checked in forward");
        let in_plane = h * wd;
        let p_in = d * in_plane;
        let kcols = co * geom.kernel_volume();
        let step = tile_rows(kcols, in_plane, d);

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; x.numel()];
            for_each_chunk(&mut dx, x.per_sample(), |s, dxs| {
                let dys = dy.sample(s);
                let mut col = Scratch::take(kcols * step * in_plane);
                for (r0, r1) in tiles(d, step) {
                    let t = (r1 - r0) * in_plane;
                    let col = &mut col[..kcols * t];
                    im2col(dys, co, out, geom, [d, h, wd], r0, r1, col);
                    gemm(
                        ci,
                        kcols,
                        t,
                        1.0,
                        w.data(),
                        MatLayout::row_major(kcols),
                        col,
                        MatLayout::row_major(t),
                        0.0,
                        &mut dxs[r0 * in_plane..],
                        strided(p_in),
                    );
                }
            });
            Tensor::new(x.shape(), dx)
        });

        let dw = needs[1].then(|| {
            let g = reduce_groups(b, ci * kcols, |s, acc| {
                let xs = x.sample(s);
                let dys = dy.sample(s);
                let mut col = Scratch::take(kcols * step * in_plane);
                for (r0, r1) in tiles(d, step) {
                    let t = (r1 - r0) * in_plane;
                    let col = &mut col[..kcols * t];
                    im2col(dys, co, out, geom, [d, h, wd], r0, r1, col);
                    gemm(
                        ci,
                        t,
                        kcols,
                        1.0,
                        &xs[r0 * in_plane..],
                        strided(p_in),
                        col,
                        MatLayout::transposed(t),
                        1.0,
                        acc,
                        MatLayout::row_major(kcols),
                    );
                }
            });
            Tensor::new(w.shape(), g)
        });

        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| bias_grad(dy, co)));
        }
        grads
    }
}

/// 3D convolution (cross-correlation) on the tape.
pub fn conv3d<'t>(x: Var<'t>, w: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Var<'t> {
    let xv = x.value();
    let wv = w.value();
    let bv = bias.map(|b| b.value());
    let y = conv3d_forward(&xv, &wv, bv.as_deref(), &geom);
    let mut parents = vec![x, w];
    parents.extend(bias);
    x.tape().record(y, &parents, || {
        Box::new(Conv3dBackward {
            x: xv,
            w: wv,
            geom,
            has_bias: bias.is_some(),
        })
    })
}

/// 3D transposed convolution on the tape.
pub fn conv_transpose3d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    bias: Option<Var<'t>>,
    geom: ConvGeometry,
) -> Var<'t> {
    let xv = x.value();
    let wv = w.value();
    let bv = bias.map(|b| b.value());
    let y = conv_transpose3d_forward(&xv, &wv, bv.as_deref(), &geom);
    let mut parents = vec![x, w];
    parents.extend(bias);
    x.tape().record(y, &parents, || {
        Box::new(ConvTranspose3dBackward {
            x: xv,
            w: wv,
            geom,
            has_bias: bias.is_some(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Tensor {
        let [b, ci, d, h, wd] = dims5(x);
        let co = w.shape()[0];
        let out = geom.conv_output([d, h, wd]).unwrap();
        let [kd, kh, kw] = geom.kernel;
        let mut y = Tensor::zeros(&[b, co, out[0], out[1], out[2]]);
        let yd = y.data_mut();
        let mut idx = 0;
        for s in 0..b {
            for o in 0..co {
                for od in 0..out[0] {
                    for oh in 0..out[1] {
                        for ow in 0..out[2] {
                            let mut acc = 0.0;
                            for c in 0..ci {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for e in 0..kw {
                                            let id = (od * geom.stride[0] + a) as isize - geom.padding[0] as isize;
                                            let ih = (oh * geom.stride[1] + bb) as isize - geom.padding[1] as isize;
                                            let iw = (ow * geom.stride[2] + e) as isize - geom.padding[2] as isize;
                                            if id < 0 || ih < 0 || iw < 0 || id as usize >= d || ih as usize >= h || iw as usize >= wd {
                                                continue;
                                            }
                                            let xi = (((s * ci + c) * d + id as usize) * h + ih as usize) * wd + iw as usize;
                                            let wi = (((o * ci + c) * kd + a) * kh + bb) * kw + e;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            yd[idx] = acc;
                            idx += 1;
                        }
                    }
                }
            }
        }
        y
    }

    fn pseudo(shape: &[usize], seed: usize) -> Tensor {
        Tensor::from_fn(shape, |i| (((i + seed) * 2654435761) % 1000) as f64 / 500.0 - 1.0)
    }

    #[test]
    fn conv_matches_naive_loops() {
        let g = ConvGeometry::new([2, 3, 3], [2, 1, 2], [0, 1, 1]);
        let x = pseudo(&[2, 3, 6, 5, 7], 1);
        let w = pseudo(&[4, 3, 2, 3, 3], 2);
        let fast = conv3d_forward(&x, &w, None, &g);
        let slow = naive_conv(&x, &w, &g);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with the same weights viewed as [Ci<-Co].
        let g = ConvGeometry::new([2, 4, 4], [2, 2, 2], [2, 1, 1]);
        let small = [4, 4, 4];
        let big = g.transposed_output(small).unwrap();
        let wt = pseudo(&[3, 2, 2, 4, 4], 3); // [Ci_small=3, Co_big=2, k]
        let y = pseudo(&[1, 3, small[0], small[1], small[2]], 4);
        let xb = pseudo(&[1, 2, big[0], big[1], big[2]], 5);
        let up = conv_transpose3d_forward(&y, &wt, None, &g);
        let down = conv3d_forward(&xb, &wt, None, &g);
        assert_eq!(down.shape(), y.shape());
        let lhs = up.dot(&xb);
        let rhs = down.dot(&y);
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
