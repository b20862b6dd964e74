//! The three generator families: DCGAN-style transposed convolutions, a
//! style-based generator with a mapping network and AdaIN, and a residual
//! generator with spectral normalisation and self-attention.

mod biggan;
mod dcgan;
mod stylegan;

use std::fmt;
use std::str::FromStr;

use lunggan_tensor::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Mode, Pass};

pub use biggan::BigGan;
pub use dcgan::Dcgan;
pub use stylegan::{StyleGan, StyleMix, ADAIN_SITES, MAPPING_LAYERS};

pub const LATENT_DIM: usize = 512;
/// Depth × height × width of every patch.
pub const PATCH_SHAPE: [usize; 3] = [32, 64, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dcgan3d,
    Stylegan3d,
    Biggan3d,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Dcgan3d, Family::Stylegan3d, Family::Biggan3d];

    pub fn name(self) -> &'static str {
        match self {
            Family::Dcgan3d => "dcgan3d",
            Family::Stylegan3d => "stylegan3d",
            Family::Biggan3d => "biggan3d",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config(
                    "generator.family",
                    format!("unknown family {s:?}; expected dcgan3d, stylegan3d or biggan3d"),
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub family: Family,
    pub width_multiplier: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(family: Family, width_multiplier: f64, seed: u64) -> Self {
        Self {
            family,
            width_multiplier,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Dcgan(Dcgan),
    Style(StyleGan),
    Big(BigGan),
}

/// A generator network together with its parameters.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    store: ParamStore,
    net: Net,
}

/// Style mixing for a training batch: a second latent batch and, per
/// sample, the AdaIN site at which the second style takes over.
pub struct LatentMix<'a, 't> {
    pub second: Var<'t>,
    pub depths: &'a [usize],
}

pub fn build_generator(config: GeneratorConfig) -> Result<Generator> {
    Generator::new(config)
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        nn::check_multiplier("generator.width_multiplier", config.width_multiplier)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let m = config.width_multiplier;
        let net = match config.family {
            Family::Dcgan3d => Net::Dcgan(Dcgan::new(&mut store, m, &mut rng)),
            Family::Stylegan3d => Net::Style(StyleGan::new(&mut store, m, &mut rng)),
            Family::Biggan3d => Net::Big(BigGan::new(&mut store, m, &mut rng)),
        };
        Ok(Self { config, store, net })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Trainable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    /// Number of AdaIN sites (zero for families without them).
    pub fn adain_sites(&self) -> usize {
        match self.net {
            Net::Style(_) => ADAIN_SITES,
            _ => 0,
        }
    }

    pub fn biggan(&self) -> Option<&BigGan> {
        match &self.net {
            Net::Big(b) => Some(b),
            _ => None,
        }
    }

    fn stylegan(&self, op: &str) -> Result<&StyleGan> {
        match &self.net {
            Net::Style(s) => Ok(s),
            _ => Err(Error::Unsupported(format!(
                "{op} needs a stylegan3d generator, not {}",
                self.config.family
            ))),
        }
    }

    /// Network output reshaped to `[B, 32, 64, 64]`.
    pub fn forward<'t>(
        &self,
        pass: &Pass<'_, 't>,
        z: Var<'t>,
        mix: Option<LatentMix<'_, 't>>,
    ) -> Var<'t> {
        let b = z.shape()[0];
        let out = match &self.net {
            Net::Dcgan(net) => net.forward(pass, z),
            Net::Big(net) => net.forward(pass, z),
            Net::Style(net) => {
                let w = net.map(pass, z);
                match mix {
                    None => net.synthesize(pass, w, None, None).0,
                    Some(m) => {
                        let second = net.map(pass, m.second);
                        let mix = StyleMix {
                            second,
                            depths: m.depths,
                        };
                        net.synthesize(pass, w, Some(&mix), None).0
                    }
                }
            }
        };
        lunggan_tensor::ops::reshape(out, &[b, PATCH_SHAPE[0], PATCH_SHAPE[1], PATCH_SHAPE[2]])
    }

    /// Runs the network without gradients. `Mode::Train` is rejected
    /// because it would need to write buffers back.
    pub fn generate_with_mode(&self, latents: &Tensor, mode: Mode) -> Result<Tensor> {
        check_latents(latents)?;
        assert_ne!(mode, Mode::Train, "inference cannot run in train mode");
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, mode);
        let out = self.forward(&pass, tape.constant(latents.clone()), None);
        Ok((*out.value()).clone())
    }

    /// `G(z)` for a `[B, 512]` batch, using running batch-norm statistics.
    pub fn generate(&self, latents: &Tensor) -> Result<Tensor> {
        self.generate_with_mode(latents, Mode::Eval)
    }

    /// Mapping-network output `w` for a `[B, 512]` batch of `z`.
    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        let net = self.stylegan("map_latent")?;
        check_latents(z)?;
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, Mode::Eval);
        Ok((*net.map(&pass, tape.constant(z.clone())).value()).clone())
    }

    /// Synthesis from styles: sites below `crossover_depth` use `w1`, the
    /// rest `w2`.
    pub fn generate_mixed(&self, w1: &Tensor, w2: &Tensor, crossover_depth: usize) -> Result<Tensor> {
        let net = self.stylegan("generate_mixed")?;
        check_latents(w1)?;
        if w1.shape() != w2.shape() {
            return Err(Error::Shape(format!(
                "style batches differ: {:?} vs {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        if crossover_depth > ADAIN_SITES {
            return Err(Error::Argument(format!(
                "crossover depth {crossover_depth} outside 0..={ADAIN_SITES}"
            )));
        }
        let b = w1.shape()[0];
        let depths = vec![crossover_depth; b];
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, Mode::Eval);
        let mix = StyleMix {
            second: tape.constant(w2.clone()),
            depths: &depths,
        };
        let (out, _) = net.synthesize(&pass, tape.constant(w1.clone()), Some(&mix), None);
        Ok((*out.value()).clone().reshape(&[b, PATCH_SHAPE[0], PATCH_SHAPE[1], PATCH_SHAPE[2]]))
    }

    /// Synthesis from a single style batch.
    pub fn generate_from_styles(&self, w: &Tensor) -> Result<Tensor> {
        self.generate_mixed(w, w, ADAIN_SITES)
    }

    /// Activation right after AdaIN site `site` and that site's `[B, 2C]`
    /// scale/shift, for styles `w`.
    pub fn adain_probe(&self, w: &Tensor, site: usize) -> Result<(Tensor, Tensor)> {
        let net = self.stylegan("adain_probe")?;
        check_latents(w)?;
        if site >= ADAIN_SITES {
            return Err(Error::Argument(format!("AdaIN site {site} out of range")));
        }
        let tape = Tape::no_grad();
        let pass = Pass::new(&tape, &self.store, false, Mode::Eval);
        let (act, style) = net.synthesize(&pass, tape.constant(w.clone()), None, Some(site));
        let style = style.expect("probe returns the style");
        Ok(((*act.value()).clone(), (*style.value()).clone()))
    }
}

pub fn check_latents(z: &Tensor) -> Result<()> {
    if z.ndim() != 2 || z.shape()[1] != LATENT_DIM || z.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "latents must be [B, {LATENT_DIM}] with B >= 1, got {:?}",
            z.shape()
        )));
    }
    Ok(())
}
