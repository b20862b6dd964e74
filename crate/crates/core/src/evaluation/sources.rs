//! Image sources feeding FID computation: in-memory batches, a generator
//! drawing fresh latents, and real patches sampled from scans.

use lunggan_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::generators::Generator;
use crate::minibatch_tools::sample_latents;
use crate::patch_pipeline::{CtVolume, PatchSampler};

pub trait ImageSource {
    /// Up to `max` more `[B, 32, 64, 64]` patches, or `None` when exhausted.
    fn next_batch(&mut self, max: usize) -> Result<Option<Tensor>>;
}

/// Serves the rows of a fixed `[N, 32, 64, 64]` tensor once, in order.
pub struct TensorSource {
    images: Tensor,
    cursor: usize,
}

impl TensorSource {
    pub fn new(images: Tensor) -> Self {
        Self { images, cursor: 0 }
    }
}

impl ImageSource for TensorSource {
    fn next_batch(&mut self, max: usize) -> Result<Option<Tensor>> {
        let n = self.images.batch();
        if self.cursor >= n || max == 0 {
            return Ok(None);
        }
        let end = (self.cursor + max).min(n);
        let batch = self.images.select(&(self.cursor..end).collect::<Vec<_>>());
        self.cursor = end;
        Ok(Some(batch))
    }
}

/// Unbounded stream of generated patches from fresh standard-normal latents.
pub struct GeneratorSource<'g> {
    generator: &'g Generator,
    rng: ChaCha8Rng,
}

impl<'g> GeneratorSource<'g> {
    pub fn new(generator: &'g Generator, rng: ChaCha8Rng) -> Self {
        Self { generator, rng }
    }
}

impl ImageSource for GeneratorSource<'_> {
    fn next_batch(&mut self, max: usize) -> Result<Option<Tensor>> {
        let z = sample_latents(max, &mut self.rng);
        self.generator.generate(&z).map(Some)
    }
}

/// Unbounded stream of real nodule-free patches; each batch comes from one
/// randomly chosen scan.
pub struct ScanSource<'v> {
    samplers: Vec<PatchSampler<'v>>,
    rng: ChaCha8Rng,
}

impl<'v> ScanSource<'v> {
    pub fn new(volumes: &'v [CtVolume], rng: ChaCha8Rng) -> Result<Self> {
        let samplers = volumes.iter().map(PatchSampler::new).collect::<Result<Vec<_>>>()?;
        Ok(Self { samplers, rng })
    }
}

impl ImageSource for ScanSource<'_> {
    fn next_batch(&mut self, max: usize) -> Result<Option<Tensor>> {
        if self.samplers.is_empty() {
            return Ok(None);
        }
        let s = &self.samplers[self.rng.random_range(0..self.samplers.len())];
        Ok(Some(s.sample(max, &mut self.rng)?.patches))
    }
}
