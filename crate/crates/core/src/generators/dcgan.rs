use lunggan_tensor::{ops, ConvGeometry, ParamStore, Var};
use rand::Rng;

use crate::nn::{scaled_channels, BatchNorm, Conv, ConvSpec, Init, Pass};

use super::LATENT_DIM;

/// Five transposed convolutions: 1³ → 4³ → 4×8×8 → 8×16×16 → 16×32×32 → 32×64×64.
#[derive(Clone, Debug)]
pub struct Dcgan {
    convs: Vec<Conv>,
    norms: Vec<BatchNorm>,
}

impl Dcgan {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, multiplier: f64, rng: &mut R) -> Self {
        let ch = |c| scaled_channels(c, multiplier);
        let layers = [
            (LATENT_DIM, ch(512), ConvGeometry::cubic(4, 1, 0)),
            (ch(512), ch(256), ConvGeometry::new([2, 4, 4], [2, 2, 2], [2, 1, 1])),
            (ch(256), ch(128), ConvGeometry::cubic(4, 2, 1)),
            (ch(128), ch(64), ConvGeometry::cubic(4, 2, 1)),
            (ch(64), 1, ConvGeometry::cubic(4, 2, 1)),
        ];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &(cin, cout, geom)) in layers.iter().enumerate() {
            let spec = ConvSpec {
                in_channels: cin,
                out_channels: cout,
                geom,
                transposed: true,
                bias: false,
                spectral: false,
                init: Init::Normal(0.02),
            };
            convs.push(Conv::new(store, &format!("g.deconv{i}"), spec, rng));
            if i + 1 < layers.len() {
                norms.push(BatchNorm::new(store, &format!("g.bn{i}"), cout));
            }
        }
        Self { convs, norms }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, z: Var<'t>) -> Var<'t> {
        let b = z.shape()[0];
        let mut h = ops::reshape(z, &[b, LATENT_DIM, 1, 1, 1]);
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(pass, h);
            h = match self.norms.get(i) {
                Some(bn) => ops::relu(bn.forward(pass, h)),
                None => ops::tanh(h),
            };
        }
        h
    }
}
