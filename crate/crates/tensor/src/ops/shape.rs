use crate::ops::conv::dims5;
use crate::parallel::for_each_chunk;
use crate::tape::{Backward, Var};
use crate::Tensor;

struct ReshapeBackward {
    shape: Vec<usize>,
}

impl Backward for ReshapeBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshape(&self.shape))]
    }
}

pub fn reshape<'t>(x: Var<'t>, shape: &[usize]) -> Var<'t> {
    let xv = x.value();
    let original = xv.shape().to_vec();
    let y = (*xv).clone().reshape(shape);
    x.tape()
        .record(y, &[x], || Box::new(ReshapeBackward { shape: original }))
}

struct UpsampleBackward {
    factors: [usize; 3],
    input: [usize; 5],
}

impl Backward for UpsampleBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let [b, c, d, h, w] = self.input;
        let [fd, fh, fw] = self.factors;
        let (oh, ow) = (h * fh, w * fw);
        let mut dx = vec![0.0; b * c * d * h * w];
        for_each_chunk(&mut dx, d * h * w, |bc, out| {
            let g = &grad.data()[bc * d * fd * oh * ow..(bc + 1) * d * fd * oh * ow];
            for z in 0..d * fd {
                for y in 0..oh {
                    let src = &g[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                    let base = ((z / fd) * h + y / fh) * w;
                    for (x, v) in src.iter().enumerate() {
                        out[base + x / fw] += v;
                    }
                }
            }
        });
        vec![Some(Tensor::new(&[b, c, d, h, w], dx))]
    }
}

/// Nearest-neighbour upsampling of [B, C, D, H, W] by per-axis integer factors.
pub fn upsample_nearest(x: Var<'_>, factors: [usize; 3]) -> Var<'_> {
    let xv = x.value();
    let [b, c, d, h, w] = dims5(&xv);
    let [fd, fh, fw] = factors;
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let mut y = vec![0.0; b * c * od * oh * ow];
    for_each_chunk(&mut y, od * oh * ow, |bc, out| {
        let src = &xv.data()[bc * d * h * w..(bc + 1) * d * h * w];
        for z in 0..od {
            for yy in 0..oh {
                let row = &mut out[(z * oh + yy) * ow..(z * oh + yy + 1) * ow];
                let base = ((z / fd) * h + yy / fh) * w;
                for (xx, v) in row.iter_mut().enumerate() {
                    *v = src[base + xx / fw];
                }
            }
        }
    });
    x.tape().record(Tensor::new(&[b, c, od, oh, ow], y), &[x], || {
        Box::new(UpsampleBackward {
            factors,
            input: [b, c, d, h, w],
        })
    })
}

struct MixRowsBackward {
    take_first: Vec<bool>,
}

impl Backward for MixRowsBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let n = grad.per_sample();
        let pick = |first: bool| {
            let mut g = grad.clone();
            for (row, &t) in g.data_mut().chunks_mut(n).zip(&self.take_first) {
                if t != first {
                    row.fill(0.0);
                }
            }
            g
        };
        vec![needs[0].then(|| pick(true)), needs[1].then(|| pick(false))]
    }
}

/// Row `i` of the result is row `i` of `a` when `take_first[i]`, else of `b`.
pub fn mix_rows<'t>(a: Var<'t>, b: Var<'t>, take_first: &[bool]) -> Var<'t> {
    let av = a.value();
    let bv = b.value();
    assert_eq!(av.shape(), bv.shape(), "mix_rows: shape mismatch");
    assert_eq!(take_first.len(), av.batch(), "mix_rows: mask length");
    let n = av.per_sample();
    let mut y = (*bv).clone();
    for (i, &t) in take_first.iter().enumerate() {
        if t {
            y.data_mut()[i * n..(i + 1) * n].copy_from_slice(av.sample(i));
        }
    }
    let mask = take_first.to_vec();
    a.tape()
        .record(y, &[a, b], move || Box::new(MixRowsBackward { take_first: mask }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn upsample_then_backward_sums_blocks() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1, 1, 1, 1, 2], vec![1.0, 2.0]));
        let y = upsample_nearest(x, [2, 1, 2]);
        assert_eq!(y.shape(), vec![1, 1, 2, 1, 4]);
        assert_eq!(y.to_tensor().data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
        let g = tape.backward(&[(y, Tensor::ones(&[1, 1, 2, 1, 4]))]);
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 4.0]);
    }
}
