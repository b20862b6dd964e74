//! Layer building blocks shared by the generators and the discriminator.
//!
//! Layers only hold [`ParamId`]s; the tensors live in the owning network's
//! [`ParamStore`]. A forward pass goes through a [`Pass`], which binds the
//! store to a tape and collects buffer updates (running statistics,
//! singular-vector estimates) to be written back afterwards.

use std::cell::RefCell;

use lunggan_tensor::ops;
use lunggan_tensor::{init, Bound, ConvGeometry, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Batch-norm momentum for running statistics.
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running buffers and spectral estimates advance.
    Train,
    /// Batch statistics, buffers untouched. Used for selection passes and
    /// gradient checks, where the forward map must be a pure function.
    Frozen,
    /// Running statistics; what inference uses.
    Eval,
}

/// One forward pass over a parameter store.
pub struct Pass<'s, 't> {
    tape: &'t Tape,
    store: &'s ParamStore,
    bound: Bound<'t>,
    pub mode: Mode,
    updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'s, 't> Pass<'s, 't> {
    /// Binds `store` to `tape`; with `track` the trainable tensors become
    /// gradient leaves.
    pub fn new(tape: &'t Tape, store: &'s ParamStore, track: bool, mode: Mode) -> Self {
        Self {
            tape,
            store,
            bound: store.bind(tape, track),
            mode,
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.bound.var(id)
    }

    pub fn value(&self, id: ParamId) -> &'s Tensor {
        self.store.get(id)
    }

    pub fn bound(&self) -> &Bound<'t> {
        &self.bound
    }

    fn push_update(&self, id: ParamId, value: Tensor) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor)> {
        self.updates.into_inner()
    }
}

/// Writes buffer updates produced by a [`Pass`] back into the store.
pub fn apply_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) {
    for (id, value) in updates {
        store.set(id, value);
    }
}

/// Channel count after applying a width multiplier (rounded up, at least 1).
pub fn scaled_channels(base: usize, multiplier: f64) -> usize {
    (((base as f64) * multiplier) - 1e-9).ceil().max(1.0) as usize
}

pub fn check_multiplier(key: &str, multiplier: f64) -> Result<()> {
    if !multiplier.is_finite() || multiplier <= 0.0 {
        return Err(Error::config(
            key,
            format!("width multiplier must be positive and finite, got {multiplier}"),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Normal(f64),
    /// He-style normal scaled by fan-in, for LeakyReLU stacks.
    He,
    FanInUniform,
}

fn init_tensor<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, how: Init, rng: &mut R) -> Tensor {
    match how {
        Init::Normal(std) => init::normal(shape, 0.0, std, rng),
        Init::He => init::normal(shape, 0.0, (2.0 / fan_in.max(1) as f64).sqrt(), rng),
        Init::FanInUniform => init::fan_in_uniform(shape, fan_in, rng),
    }
}

fn unit_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Tensor {
    let mut t = init::normal(&[len], 0.0, 1.0, rng);
    let n = t.norm().max(1e-12);
    t.data_mut().iter_mut().for_each(|v| *v /= n);
    t
}

/// Weight divided by its estimated top singular value.
fn spectral_weight<'t>(pass: &Pass<'_, 't>, weight: ParamId, u: ParamId) -> Var<'t> {
    let iters = usize::from(pass.mode == Mode::Train);
    let est = ops::power_iteration(pass.value(weight), pass.value(u).data(), iters);
    if pass.mode == Mode::Train {
        let len = est.u.len();
        pass.push_update(u, Tensor::new(&[len], est.u.clone()));
    }
    ops::spectral_normalize(pass.param(weight), &est.u, &est.v)
}

/// 3D convolution or transposed convolution, optionally spectrally normalised.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spectral_u: Option<ParamId>,
    pub geom: ConvGeometry,
    pub transposed: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeometry,
    pub transposed: bool,
    pub bias: bool,
    pub spectral: bool,
    pub init: Init,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let k = spec.geom.kernel;
        let shape = if spec.transposed {
            [spec.in_channels, spec.out_channels, k[0], k[1], k[2]]
        } else {
            [spec.out_channels, spec.in_channels, k[0], k[1], k[2]]
        };
        let fan_in = spec.in_channels * spec.geom.kernel_volume();
        let weight = store.add_param(
            &format!("{name}.weight"),
            init_tensor(&shape, fan_in, spec.init, rng),
        );
        let bias = spec
            .bias
            .then(|| store.add_param(&format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])));
        let spectral_u = spec
            .spectral
            .then(|| store.add_buffer(&format!("{name}.sn_u"), unit_vector(shape[0], rng)));
        Self {
            weight,
            bias,
            spectral_u,
            geom: spec.geom,
            transposed: spec.transposed,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
        }
    }

    pub fn weight_var<'t>(&self, pass: &Pass<'_, 't>) -> Var<'t> {
        match self.spectral_u {
            Some(u) => spectral_weight(pass, self.weight, u),
            None => pass.param(self.weight),
        }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Var<'t> {
        let w = self.weight_var(pass);
        let b = self.bias.map(|b| pass.param(b));
        if self.transposed {
            ops::conv_transpose3d(x, w, b, self.geom)
        } else {
            ops::conv3d(x, w, b, self.geom)
        }
    }
}

/// Fully connected layer on `[B, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spectral_u: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        spectral: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(
            &format!("{name}.weight"),
            init_tensor(&[out_features, in_features], in_features, init, rng),
        );
        let bias = Some(store.add_param(&format!("{name}.bias"), Tensor::zeros(&[out_features])));
        let spectral_u =
            spectral.then(|| store.add_buffer(&format!("{name}.sn_u"), unit_vector(out_features, rng)));
        Self {
            weight,
            bias,
            spectral_u,
            in_features,
            out_features,
        }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Var<'t> {
        let w = match self.spectral_u {
            Some(u) => spectral_weight(pass, self.weight, u),
            None => pass.param(self.weight),
        };
        ops::linear(x, w, self.bias.map(|b| pass.param(b)))
    }
}

/// 3D batch normalisation with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Var<'t> {
        let (gamma, beta) = (pass.param(self.gamma), pass.param(self.beta));
        match pass.mode {
            Mode::Eval => ops::batch_norm_eval(
                x,
                gamma,
                beta,
                pass.value(self.running_mean).data(),
                pass.value(self.running_var).data(),
            ),
            Mode::Frozen => ops::batch_norm_train(x, gamma, beta).0,
            Mode::Train => {
                let (y, stats) = ops::batch_norm_train(x, gamma, beta);
                let n = stats.count as f64;
                let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let mean = pass
                    .value(self.running_mean)
                    .zip_map(&Tensor::new(&[stats.mean.len()], stats.mean.clone()), |r, b| {
                        (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b
                    });
                let var = pass
                    .value(self.running_var)
                    .zip_map(&Tensor::new(&[stats.var.len()], stats.var.clone()), |r, b| {
                        (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b * correction
                    });
                pass.push_update(self.running_mean, mean);
                pass.push_update(self.running_var, var);
                y
            }
        }
    }
}

/// Adaptive instance normalisation: instance-normalise, then apply a
/// per-channel scale and shift computed from the style vector.
#[derive(Clone, Debug)]
pub struct AdaIn {
    pub affine: Linear,
    pub channels: usize,
}

impl AdaIn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        style_dim: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let affine = Linear::new(store, name, style_dim, 2 * channels, false, Init::FanInUniform, rng);
        // Unit scale at initialisation.
        let bias = store.get_mut(affine.bias.expect("affine has bias"));
        bias.data_mut()[..channels].iter_mut().for_each(|v| *v = 1.0);
        Self { affine, channels }
    }

    /// `(scale, shift)` per sample, laid out as `[B, 2C]`.
    pub fn style<'t>(&self, pass: &Pass<'_, 't>, w: Var<'t>) -> Var<'t> {
        self.affine.forward(pass, w)
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>, w: Var<'t>) -> Var<'t> {
        ops::channel_affine(ops::instance_norm(x), self.style(pass, w))
    }
}

/// Non-local self-attention over all voxels, gated by a learned scalar
/// initialised to zero.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub out: Conv,
    pub gamma: ParamId,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let c8 = (channels / 8).max(1);
        let c2 = (channels / 2).max(1);
        let point = ConvGeometry::cubic(1, 1, 0);
        let mut conv = |store: &mut ParamStore, n: &str, cin, cout| {
            Conv::new(
                store,
                &format!("{name}.{n}"),
                ConvSpec {
                    in_channels: cin,
                    out_channels: cout,
                    geom: point,
                    transposed: false,
                    bias: false,
                    spectral: true,
                    init: Init::FanInUniform,
                },
                rng,
            )
        };
        let query = conv(store, "query", channels, c8);
        let key = conv(store, "key", channels, c8);
        let value = conv(store, "value", channels, c2);
        let out = conv(store, "out", c2, channels);
        let gamma = store.add_param(&format!("{name}.gamma"), Tensor::zeros(&[1]));
        Self {
            query,
            key,
            value,
            out,
            gamma,
        }
    }

    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        let (b, n) = (shape[0], shape[2] * shape[3] * shape[4]);
        let flat = |v: Var<'t>| {
            let c = v.shape()[1];
            ops::reshape(v, &[b, c, n])
        };
        let q = flat(self.query.forward(pass, x));
        let k = flat(self.key.forward(pass, x));
        let v = flat(self.value.forward(pass, x));
        // attn[i, j]: weight of voxel j for output voxel i.
        let attn = ops::softmax_last(ops::bmm(q, true, k, false));
        let mixed = ops::bmm(v, false, attn, true);
        let c2 = mixed.shape()[1];
        let mixed = ops::reshape(mixed, &[b, c2, shape[2], shape[3], shape[4]]);
        let o = self.out.forward(pass, mixed);
        ops::add(x, ops::mul_scalar_var(o, pass.param(self.gamma)))
    }
}
