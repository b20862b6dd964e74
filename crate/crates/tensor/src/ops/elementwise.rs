use std::sync::Arc;

use crate::tape::{Backward, Var};
use crate::Tensor;

struct AddBackward;

impl Backward for AddBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())]
    }
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let y = a.value().zip_map(&b.value(), |p, q| p + q);
    a.tape().record(y, &[a, b], || Box::new(AddBackward))
}

struct ScaleBackward(f64);

impl Backward for ScaleBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.scale(self.0))]
    }
}

/// Multiplies by a constant.
pub fn scale(x: Var<'_>, factor: f64) -> Var<'_> {
    let y = x.value().scale(factor);
    x.tape().record(y, &[x], || Box::new(ScaleBackward(factor)))
}

struct MulScalarBackward {
    x: Arc<Tensor>,
    g: f64,
}

impl Backward for MulScalarBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| grad.scale(self.g)),
            needs[1].then(|| Tensor::scalar(grad.dot(&self.x))),
        ]
    }
}

/// `x * g` for a one-element variable `g`.
pub fn mul_scalar_var<'t>(x: Var<'t>, g: Var<'t>) -> Var<'t> {
    let gv = g.value();
    assert_eq!(gv.numel(), 1, "mul_scalar_var expects a single-element multiplier");
    let gs = gv.data()[0];
    let xv = x.value();
    let y = xv.scale(gs);
    x.tape()
        .record(y, &[x, g], || Box::new(MulScalarBackward { x: xv, g: gs }))
}

/// Pointwise activation whose derivative is a function of input and output.
struct PointwiseBackward {
    x: Arc<Tensor>,
    y: Arc<Tensor>,
    deriv: fn(f64, f64, f64) -> f64,
    param: f64,
}

impl Backward for PointwiseBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let d = self.deriv;
        let p = self.param;
        let data = grad
            .data()
            .iter()
            .zip(self.x.data())
            .zip(self.y.data())
            .map(|((g, &x), &y)| g * d(x, y, p))
            .collect();
        vec![Some(Tensor::new(grad.shape(), data))]
    }
}

fn pointwise<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    deriv: fn(f64, f64, f64) -> f64,
    param: f64,
) -> Var<'t> {
    let xv = x.value();
    let y = Arc::new(xv.map(f));
    x.tape().record_arc(y.clone(), &[x], move || {
        Box::new(PointwiseBackward {
            x: xv,
            y,
            deriv,
            param,
        })
    })
}

pub fn relu(x: Var<'_>) -> Var<'_> {
    pointwise(x, |v| v.max(0.0), |x, _, _| if x > 0.0 { 1.0 } else { 0.0 }, 0.0)
}

pub fn leaky_relu(x: Var<'_>, slope: f64) -> Var<'_> {
    pointwise(
        x,
        move |v| if v > 0.0 { v } else { slope * v },
        |x, _, s| if x > 0.0 { 1.0 } else { s },
        slope,
    )
}

pub fn tanh(x: Var<'_>) -> Var<'_> {
    pointwise(x, f64::tanh, |_, y, _| 1.0 - y * y, 0.0)
}
