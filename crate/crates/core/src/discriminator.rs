//! Five-layer 3D convolutional discriminator with an optional MDmin channel
//! before the final convolution.

use lunggan_tensor::{ops, ConvGeometry, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::PATCH_SHAPE;
use crate::minibatch_tools::append_mdmin;
use crate::nn::{self, scaled_channels, Conv, ConvSpec, Init, Mode, Pass};

/// Default feature tap: after the fourth LeakyReLU, right where MDmin sits.
pub const DEFAULT_TAP: usize = 4;
const HIDDEN_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub use_mdmin: bool,
    pub width_multiplier: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    store: ParamStore,
    hidden: Vec<Conv>,
    last: Conv,
}

pub fn build_discriminator(config: DiscriminatorConfig) -> Result<Discriminator> {
    Discriminator::new(config)
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        nn::check_multiplier("discriminator.width_multiplier", config.width_multiplier)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let ch = |c| scaled_channels(c, config.width_multiplier);
        let stride2 = ConvGeometry::cubic(4, 2, 1);
        let layers = [
            (1, ch(64), ConvGeometry::new([2, 4, 4], [2, 2, 2], [0, 1, 1])),
            (ch(64), ch(128), stride2),
            (ch(128), ch(256), stride2),
            (ch(256), ch(512), stride2),
        ];
        let spec = |cin, cout, geom| ConvSpec {
            in_channels: cin,
            out_channels: cout,
            geom,
            transposed: false,
            bias: false,
            spectral: false,
            init: Init::Normal(0.02),
        };
        let hidden = layers
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, geom))| {
                Conv::new(&mut store, &format!("d.conv{i}"), spec(cin, cout, geom), &mut rng)
            })
            .collect();
        let last_in = ch(512) + usize::from(config.use_mdmin);
        let last = Conv::new(
            &mut store,
            "d.conv4",
            spec(last_in, 1, ConvGeometry::new([2, 4, 4], [1, 1, 1], [0, 0, 0])),
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            hidden,
            last,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn uses_mdmin(&self) -> bool {
        self.config.use_mdmin
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn count_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    /// Input channels of the final convolution.
    pub fn final_in_channels(&self) -> usize {
        self.last.in_channels
    }

    fn check_input(x: &[usize]) -> Result<()> {
        if x.len() != 4 || x[1..] != PATCH_SHAPE || x[0] == 0 {
            return Err(Error::Shape(format!(
                "discriminator expects [B, 32, 64, 64], got {x:?}"
            )));
        }
        Ok(())
    }

    /// Activations after hidden layer `layer` (1-based, LeakyReLU applied).
    pub fn features<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>, layer: usize) -> Result<Var<'t>> {
        if !(1..=HIDDEN_LAYERS).contains(&layer) {
            return Err(Error::Argument(format!(
                "feature tap {layer} outside 1..={HIDDEN_LAYERS}"
            )));
        }
        let shape = x.shape();
        Self::check_input(&shape)?;
        let mut h = ops::reshape(x, &[shape[0], 1, shape[1], shape[2], shape[3]]);
        for conv in &self.hidden[..layer] {
            h = ops::leaky_relu(conv.forward(pass, h), 0.2);
        }
        Ok(h)
    }

    /// Raw scores `D(x)`, shape `[B]`.
    pub fn forward<'t>(&self, pass: &Pass<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let b = x.shape()[0];
        if self.config.use_mdmin && b < 2 {
            return Err(Error::Argument(format!(
                "MDmin needs a batch of at least 2, got {b}"
            )));
        }
        let mut h = self.features(pass, x, HIDDEN_LAYERS)?;
        if self.config.use_mdmin {
            h = append_mdmin(h)?;
        }
        let out = self.last.forward(pass, h);
        Ok(ops::reshape(out, &[b]))
    }

    /// Scores for a `[B, 32, 64, 64]` batch, without gradients.
    pub fn discriminate(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, Mode::Eval);
        let out = self.forward(&pass, tape.constant(batch.clone()))?;
        Ok(out.value().data().to_vec())
    }

    pub fn features_at_layer(&self, batch: &Tensor, layer: usize) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, Mode::Eval);
        let out = self.features(&pass, tape.constant(batch.clone()), layer)?;
        Ok((*out.value()).clone())
    }

    /// Shape of the features after `layer` for a batch of `b`, from stride
    /// arithmetic alone.
    pub fn feature_shape(&self, b: usize, layer: usize) -> Option<Vec<usize>> {
        let mut dims = PATCH_SHAPE;
        let mut channels = 1;
        for conv in self.hidden.get(..layer)? {
            dims = conv.geom.conv_output(dims)?;
            channels = conv.out_channels;
        }
        Some(vec![b, channels, dims[0], dims[1], dims[2]])
    }
}
