use lunggan_tensor::{ops, ConvGeometry, ParamStore, Var};
use rand::Rng;

use crate::nn::{scaled_channels, BatchNorm, Conv, ConvSpec, Init, Linear, Pass, SelfAttention};

use super::LATENT_DIM;

fn sn_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    rng: &mut R,
) -> Conv {
    let spec = ConvSpec {
        in_channels: cin,
        out_channels: cout,
        geom: ConvGeometry::cubic(kernel, 1, kernel / 2),
        transposed: false,
        bias: true,
        spectral: true,
        init: Init::FanInUniform,
    };
    Conv::new(store, name, spec, rng)
}

/// Pre-activation residual block with nearest-neighbour upsampling; the
/// 1×1×1 convolution projects the upsampled shortcut.
#[derive(Clone, Debug)]
struct ResBlock {
    bn1: BatchNorm,
    conv1: Conv,
    bn2: BatchNorm,
    conv2: Conv,
    shortcut: Conv,
    up: [usize; 3],
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        up: [usize; 3],
        rng: &mut R,
    ) -> Self {
        Self {
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cin),
            conv1: sn_conv(store, &format!("{name}.conv1"), cin, cout, 3, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout),
            conv2: sn_conv(store, &format!("{name}.conv2"), cout, cout, 3, rng),
            shortcut: sn_conv(store, &format!("{name}.shortcut"), cin, cout, 1, rng),
            up,
        }
    }

    fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Var<'t> {
        let h = ops::relu(self.bn1.forward(pass, x));
        let h = self.conv1.forward(pass, ops::upsample_nearest(h, self.up));
        let h = ops::relu(self.bn2.forward(pass, h));
        let h = self.conv2.forward(pass, h);
        let skip = self.shortcut.forward(pass, ops::upsample_nearest(x, self.up));
        ops::add(h, skip)
    }
}

#[derive(Clone, Debug)]
pub struct BigGan {
    fc: Linear,
    base: usize,
    blocks: Vec<ResBlock>,
    attention: SelfAttention,
    out_bn: BatchNorm,
    out_conv: Conv,
}

impl BigGan {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, multiplier: f64, rng: &mut R) -> Self {
        let ch = |c| scaled_channels(c, multiplier);
        let base = ch(96);
        let fc = Linear::new(store, "g.fc", LATENT_DIM, base * 64, true, Init::FanInUniform, rng);
        let widths = [base, ch(96), ch(48), ch(24), ch(12)];
        let mut blocks = Vec::new();
        let mut attention = None;
        for i in 0..4 {
            let up = if i == 0 { [1, 2, 2] } else { [2, 2, 2] };
            let name = format!("g.block{i}");
            blocks.push(ResBlock::new(store, &name, widths[i], widths[i + 1], up, rng));
            if i == 0 {
                attention = Some(SelfAttention::new(store, "g.attention", widths[1], rng));
            }
        }
        Self {
            fc,
            base,
            blocks,
            attention: attention.expect("attention after first block"),
            out_bn: BatchNorm::new(store, "g.out_bn", widths[4]),
            out_conv: sn_conv(store, "g.out_conv", widths[4], 1, 3, rng),
        }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, z: Var<'t>) -> Var<'t> {
        let b = z.shape()[0];
        let h = self.fc.forward(pass, z);
        let mut h = ops::reshape(h, &[b, self.base, 4, 4, 4]);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(pass, h);
            if i == 0 {
                h = self.attention.forward(pass, h);
            }
        }
        let h = ops::relu(self.out_bn.forward(pass, h));
        ops::tanh(self.out_conv.forward(pass, h))
    }

    pub fn attention(&self) -> &SelfAttention {
        &self.attention
    }

    /// Every spectrally normalised weight with its singular-vector buffer.
    pub fn spectral_layers(&self) -> Vec<(lunggan_tensor::ParamId, lunggan_tensor::ParamId)> {
        let mut out = vec![(self.fc.weight, self.fc.spectral_u.expect("sn fc"))];
        let mut push = |c: &Conv| out.push((c.weight, c.spectral_u.expect("sn conv")));
        for b in &self.blocks {
            push(&b.conv1);
            push(&b.conv2);
            push(&b.shortcut);
        }
        push(&self.attention.query);
        push(&self.attention.key);
        push(&self.attention.value);
        push(&self.attention.out);
        push(&self.out_conv);
        out
    }
}
