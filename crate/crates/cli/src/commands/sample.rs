use clap::Args;
use lunggan_core::evaluation::{lerp, slerp};
use lunggan_core::generators::{Family, LATENT_DIM};
use lunggan_core::minibatch_tools::sample_latents;
use lunggan_core::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{flag, load_generator, prepare, switch, write_slice_grid};
use crate::data::write_patch_dir;
use crate::Common;

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Number of patches.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write every patch as a MetaImage.
    #[arg(long)]
    pub save_patches: bool,
}

/// Latent `i` comes from its own seed, drawn from the command seed, so any
/// single patch can be regenerated from the sidecar CSV.
fn latent_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

fn latents_from_seeds(seeds: &[u64]) -> Tensor {
    let mut data = Vec::with_capacity(seeds.len() * LATENT_DIM);
    for &s in seeds {
        data.extend_from_slice(sample_latents(1, &mut ChaCha8Rng::seed_from_u64(s)).data());
    }
    Tensor::new(&[seeds.len(), LATENT_DIM], data)
}

pub fn run_sample(a: SampleArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "sample.n", &a.n);
    switch(&mut flags, "sample.save_patches", a.save_patches);
    let ctx = prepare(
        "sample",
        &a.common,
        &[("checkpoint", ""), ("sample.n", "16"), ("sample.save_patches", "false")],
        flags,
    )?;
    let s = &ctx.settings;
    let n: usize = s.get("sample.n")?;
    if n == 0 {
        return Err(Error::config("sample.n", "must be at least 1"));
    }
    let gen = load_generator(s)?;
    let seeds = latent_seeds(ctx.seed, n);
    let patches = gen.generate(&latents_from_seeds(&seeds))?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let grid = ctx.out.join("grid.png");
    write_slice_grid(&grid, &patches, (n as f64).sqrt().ceil() as usize)?;
    let csv_path = ctx.out.join("latents.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::format("latents csv", e.to_string()))?;
    w.write_record(["index", "latent_seed"])
        .and_then(|_| {
            seeds
                .iter()
                .enumerate()
                .try_for_each(|(i, s)| w.write_record([i.to_string(), s.to_string()]))
        })
        .map_err(|e| Error::format("latents csv", e.to_string()))?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let mut artifacts = vec![grid, csv_path];
    if s.bool("sample.save_patches")? {
        artifacts.extend(write_patch_dir(&ctx.out.join("patches"), "sample", &patches)?);
    }
    ctx.finish(&artifacts)
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Frames including both endpoints.
    #[arg(long)]
    pub steps: Option<usize>,
}

pub fn run_interpolate(a: InterpolateArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "interpolate.steps", &a.steps);
    let ctx = prepare(
        "interpolate",
        &a.common,
        &[("checkpoint", ""), ("interpolate.steps", "8")],
        flags,
    )?;
    let s = &ctx.settings;
    let steps: usize = s.get("interpolate.steps")?;
    if steps < 2 {
        return Err(Error::config("interpolate.steps", "must be at least 2"));
    }
    let gen = load_generator(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let ends = sample_latents(2, &mut rng);
    let (z1, z2) = (
        Tensor::new(&[LATENT_DIM], ends.sample(0).to_vec()),
        Tensor::new(&[LATENT_DIM], ends.sample(1).to_vec()),
    );
    let ts: Vec<f64> = (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect();
    let patches = if gen.family() == Family::Stylegan3d {
        let w = gen.map_latent(&ends)?;
        let (w1, w2) = (
            Tensor::new(&[LATENT_DIM], w.sample(0).to_vec()),
            Tensor::new(&[LATENT_DIM], w.sample(1).to_vec()),
        );
        let path: Vec<Tensor> = ts.iter().map(|&t| lerp(&w1, &w2, t)).collect::<Result<_>>()?;
        gen.generate_from_styles(&Tensor::stack(&path))?
    } else {
        let path: Vec<Tensor> = ts.iter().map(|&t| slerp(&z1, &z2, t)).collect::<Result<_>>()?;
        gen.generate(&Tensor::stack(&path))?
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let strip = ctx.out.join("interpolation.png");
    write_slice_grid(&strip, &patches, steps)?;
    ctx.finish(&[strip])
}
