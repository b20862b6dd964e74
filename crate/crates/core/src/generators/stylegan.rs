use lunggan_tensor::{init, ops, ConvGeometry, ParamId, ParamStore, Var};
use rand::Rng;

use crate::nn::{scaled_channels, AdaIn, Conv, ConvSpec, Init, Linear, Pass};

use super::LATENT_DIM;

/// Fully connected layers in the mapping network.
pub const MAPPING_LAYERS: usize = 8;
/// One AdaIN site precedes each synthesis convolution.
pub const ADAIN_SITES: usize = 11;

#[derive(Clone, Debug)]
struct SynthesisLayer {
    adain: AdaIn,
    upsample: bool,
    conv: Conv,
    activate: bool,
}

/// Per-site choice between two style batches.
pub struct StyleMix<'a, 't> {
    pub second: Var<'t>,
    /// Sites with index below `depths[i]` use the first style for sample `i`.
    pub depths: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct StyleGan {
    mapping: Vec<Linear>,
    constant: ParamId,
    layers: Vec<SynthesisLayer>,
}

impl StyleGan {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, multiplier: f64, rng: &mut R) -> Self {
        let mapping = (0..MAPPING_LAYERS)
            .map(|i| {
                Linear::new(store, &format!("g.map{i}"), LATENT_DIM, LATENT_DIM, false, Init::He, rng)
            })
            .collect();
        let ch = |c| scaled_channels(c, multiplier);
        // (in, out, upsample before the conv, LeakyReLU after it)
        let plan = [
            (512, 512, false, true),
            (512, 256, true, true),
            (256, 256, false, true),
            (256, 128, true, true),
            (128, 128, false, true),
            (128, 64, true, true),
            (64, 64, false, false),
            (64, 32, true, true),
            (32, 32, false, true),
            (32, 16, true, true),
            (16, 1, false, false),
        ];
        let constant = store.add_param(
            "g.const",
            init::normal(&[1, ch(512), 1, 2, 2], 0.0, 1.0, rng),
        );
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, upsample, activate))| {
                let cin = ch(cin);
                let cout = if cout == 1 { 1 } else { ch(cout) };
                let adain = AdaIn::new(store, &format!("g.adain{i}"), LATENT_DIM, cin, rng);
                let spec = ConvSpec {
                    in_channels: cin,
                    out_channels: cout,
                    geom: ConvGeometry::cubic(3, 1, 1),
                    transposed: false,
                    bias: false,
                    spectral: false,
                    init: Init::He,
                };
                let conv = Conv::new(store, &format!("g.conv{i}"), spec, rng);
                SynthesisLayer {
                    adain,
                    upsample,
                    conv,
                    activate,
                }
            })
            .collect();
        Self {
            mapping,
            constant,
            layers,
        }
    }

    pub fn map<'t>(&self, pass: &Pass<'_, 't>, z: Var<'t>) -> Var<'t> {
        self.mapping
            .iter()
            .fold(z, |h, fc| ops::leaky_relu(fc.forward(pass, h), 0.2))
    }

    fn site_style<'t>(w: Var<'t>, mix: Option<&StyleMix<'_, 't>>, site: usize) -> Var<'t> {
        match mix {
            None => w,
            Some(m) => {
                let take_first: Vec<bool> = m.depths.iter().map(|&d| site < d).collect();
                if take_first.iter().all(|&t| t) {
                    w
                } else if take_first.iter().all(|&t| !t) {
                    m.second
                } else {
                    ops::mix_rows(w, m.second, &take_first)
                }
            }
        }
    }

    /// Synthesis network from styles `[B, 512]`. With `probe = Some(s)` the
    /// pass stops right after AdaIN site `s` and returns that activation
    /// together with the site's `[B, 2C]` scale/shift.
    pub fn synthesize<'t>(
        &self,
        pass: &Pass<'_, 't>,
        w: Var<'t>,
        mix: Option<&StyleMix<'_, 't>>,
        probe: Option<usize>,
    ) -> (Var<'t>, Option<Var<'t>>) {
        let b = w.shape()[0];
        let mut h = broadcast_batch(pass.param(self.constant), b);
        for (i, layer) in self.layers.iter().enumerate() {
            let style = layer.adain.style(pass, Self::site_style(w, mix, i));
            h = ops::channel_affine(ops::instance_norm(h), style);
            if probe == Some(i) {
                return (h, Some(style));
            }
            if layer.upsample {
                h = ops::upsample_nearest(h, [2, 2, 2]);
            }
            h = layer.conv.forward(pass, h);
            if layer.activate {
                h = ops::leaky_relu(h, 0.2);
            }
        }
        (ops::tanh(h), None)
    }
}

/// Repeats a `[1, ...]` variable `b` times along the batch axis, as a
/// nearest-neighbour upsample of the flattened tensor.
fn broadcast_batch(x: Var<'_>, b: usize) -> Var<'_> {
    let shape = x.shape();
    let per = shape[1..].iter().product::<usize>();
    let flat = ops::reshape(x, &[1, 1, 1, 1, per]);
    let tiled = ops::upsample_nearest(flat, [1, b, 1]);
    let mut out = vec![b];
    out.extend_from_slice(&shape[1..]);
    ops::reshape(tiled, &out)
}
