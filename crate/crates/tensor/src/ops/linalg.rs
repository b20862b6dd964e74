use std::sync::Arc;

use crate::kernels::{gemm, MatLayout};
use crate::tape::{Backward, Var};
use crate::Tensor;

fn dims2(t: &Tensor) -> [usize; 2] {
    let s = t.shape();
    assert_eq!(s.len(), 2, "expected a matrix, got {s:?}");
    [s[0], s[1]]
}

/// `x` [B, in] times `w`ᵀ ([out, in]) plus optional `bias` [out].
pub fn linear_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let [b, fin] = dims2(x);
    let [fout, fin2] = dims2(w);
    assert_eq!(fin, fin2, "linear: input width {fin} does not match weight {fin2}");
    let mut y = vec![0.0; b * fout];
    gemm(
        b,
        fin,
        fout,
        1.0,
        x.data(),
        MatLayout::row_major(fin),
        w.data(),
        MatLayout::transposed(fin),
        0.0,
        &mut y,
        MatLayout::row_major(fout),
    );
    if let Some(bias) = bias {
        for row in y.chunks_mut(fout) {
            row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
        }
    }
    Tensor::new(&[b, fout], y)
}

struct LinearBackward {
    x: Arc<Tensor>,
    w: Arc<Tensor>,
    has_bias: bool,
}

impl Backward for LinearBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let [b, fin] = dims2(&self.x);
        let fout = self.w.shape()[0];
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; b * fin];
            gemm(
                b,
                fout,
                fin,
                1.0,
                dy.data(),
                MatLayout::row_major(fout),
                self.w.data(),
                MatLayout::row_major(fin),
                0.0,
                &mut dx,
                MatLayout::row_major(fin),
            );
            Tensor::new(&[b, fin], dx)
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; fout * fin];
            gemm(
                fout,
                b,
                fin,
                1.0,
                dy.data(),
                MatLayout::transposed(fout),
                self.x.data(),
                MatLayout::row_major(fin),
                0.0,
                &mut dw,
                MatLayout::row_major(fin),
            );
            Tensor::new(&[fout, fin], dw)
        });
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| {
                let mut db = vec![0.0; fout];
                for row in dy.data().chunks(fout) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                Tensor::new(&[fout], db)
            }));
        }
        grads
    }
}

/// Fully connected layer on the tape.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
    let xv = x.value();
    let wv = w.value();
    let bv = bias.map(|b| b.value());
    let y = linear_forward(&xv, &wv, bv.as_deref());
    let mut parents = vec![x, w];
    parents.extend(bias);
    x.tape().record(y, &parents, || {
        Box::new(LinearBackward {
            x: xv,
            w: wv,
            has_bias: bias.is_some(),
        })
    })
}

fn dims3(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected [B, M, N], got {s:?}");
    [s[0], s[1], s[2]]
}

/// Logical (rows, cols) of a stored [B, r, c] operand, optionally transposed.
fn op_dims(t: &Tensor, trans: bool) -> (usize, usize, MatLayout) {
    let [_, r, c] = dims3(t);
    if trans {
        (c, r, MatLayout::transposed(c))
    } else {
        (r, c, MatLayout::row_major(c))
    }
}

fn bmm_raw(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let batch = a.shape()[0];
    assert_eq!(batch, b.shape()[0], "bmm: batch mismatch");
    let (m, k, la) = op_dims(a, ta);
    let (k2, n, lb) = op_dims(b, tb);
    assert_eq!(k, k2, "bmm: inner dimensions differ ({k} vs {k2})");
    let mut out = vec![0.0; batch * m * n];
    for (s, c) in out.chunks_mut(m * n).enumerate() {
        gemm(
            m,
            k,
            n,
            1.0,
            a.sample(s),
            la,
            b.sample(s),
            lb,
            0.0,
            c,
            MatLayout::row_major(n),
        );
    }
    Tensor::new(&[batch, m, n], out)
}

struct BmmBackward {
    a: Arc<Tensor>,
    ta: bool,
    b: Arc<Tensor>,
    tb: bool,
}

impl Backward for BmmBackward {
    fn backward(&self, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        // C = op(A) op(B). dop(A) = dC op(B)^T, dop(B) = op(A)^T dC.
        let da = needs[0].then(|| {
            if self.ta {
                // A^T = dC op(B)^T  =>  dA = op(B) dC^T
                bmm_raw(&self.b, self.tb, dy, true)
            } else {
                bmm_raw(dy, false, &self.b, !self.tb)
            }
        });
        let db = needs[1].then(|| {
            if self.tb {
                // dB = dC^T op(A)
                bmm_raw(dy, true, &self.a, self.ta)
            } else {
                bmm_raw(&self.a, !self.ta, dy, false)
            }
        });
        vec![da, db]
    }
}

/// Batched matrix product `op(a) · op(b)` of [B, ·, ·] operands, where `op`
/// transposes when the matching flag is set.
pub fn bmm<'t>(a: Var<'t>, ta: bool, b: Var<'t>, tb: bool) -> Var<'t> {
    let av = a.value();
    let bv = b.value();
    let y = bmm_raw(&av, ta, &bv, tb);
    a.tape().record(y, &[a, b], || {
        Box::new(BmmBackward {
            a: av,
            ta,
            b: bv,
            tb,
        })
    })
}

struct SoftmaxBackward {
    y: Arc<Tensor>,
}

impl Backward for SoftmaxBackward {
    fn backward(&self, dy: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let n = *self.y.shape().last().unwrap();
        let mut dx = dy.clone();
        for (g, y) in dx.data_mut().chunks_mut(n).zip(self.y.data().chunks(n)) {
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            g.iter_mut().zip(y).for_each(|(gi, yi)| *gi = yi * (*gi - dot));
        }
        vec![Some(dx)]
    }
}

/// Softmax over the last axis.
pub fn softmax_last(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let n = *xv.shape().last().expect("softmax of a scalar");
    let mut y = (*xv).clone();
    for row in y.data_mut().chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    let y = Arc::new(y);
    x.tape()
        .record_arc(y.clone(), &[x], move || Box::new(SoftmaxBackward { y }))
}
