pub mod compare;
pub mod fid;
pub mod observer;
pub mod phantom;
pub mod sample;
pub mod structure;
pub mod train;

use std::path::{Path, PathBuf};

use image::GrayImage;
use lunggan_core::checkpoint::load_checkpoint;
use lunggan_core::evaluation::central_slices;
use lunggan_core::evaluation::sources::{GeneratorSource, ScanSource};
use lunggan_core::evaluation::{ImageSource, TensorSource};
use lunggan_core::evaluation::observer::to_u8;
use lunggan_core::generators::Generator;
use lunggan_core::{Error, Result, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_dataset, read_patch_dir};
use crate::manifest::write_manifest;
use crate::settings::Settings;
use crate::Common;

/// Environment variable selecting the compute device.
pub const DEVICE_VAR: &str = "LUNGGAN_DEVICE";

/// A command with its settings resolved.
pub struct Context {
    pub name: &'static str,
    pub settings: Settings,
    pub out: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
    pub device: String,
}

fn device() -> Result<String> {
    match std::env::var(DEVICE_VAR) {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") => Ok("cpu".into()),
        Ok(v) => Err(Error::config(DEVICE_VAR, format!("device {v:?} is not available; only cpu is supported"))),
    }
}

/// Resolves settings: `defaults` (plus `seed` and `out`), then the config
/// file, then `flags` and `--set` overrides.
pub fn prepare(
    name: &'static str,
    common: &Common,
    defaults: &[(&str, &str)],
    mut flags: Vec<(String, String)>,
) -> Result<Context> {
    let mut all: Vec<(&str, &str)> = vec![("seed", "0"), ("out", "")];
    all.extend_from_slice(defaults);
    if let Some(seed) = common.seed {
        flags.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        flags.push(("out".into(), out.display().to_string()));
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv.clone(), "--set expects KEY=VALUE"))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    let settings = Settings::resolve(&all, common.config.as_deref(), &flags)?;
    let seed = settings.get("seed")?;
    let out = settings.require_path("out")?;
    Ok(Context {
        name,
        settings,
        out,
        seed,
        deterministic: common.deterministic,
        device: device()?,
    })
}

impl Context {
    pub fn finish(&self, artifacts: &[PathBuf]) -> Result<()> {
        write_manifest(
            &self.out,
            self.name,
            &self.settings,
            self.seed,
            self.deterministic,
            &self.device,
            artifacts,
        )?;
        Ok(())
    }
}

/// Pushes `(key, value)` for each flag that was given.
pub fn flag<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        flags.push((key.to_string(), v.to_string()));
    }
}

pub fn switch(flags: &mut Vec<(String, String)>, key: &str, on: bool) {
    if on {
        flags.push((key.to_string(), "true".into()));
    }
}

pub fn load_generator(s: &Settings) -> Result<Generator> {
    Ok(load_checkpoint(&s.require_path("checkpoint")?)?.generator)
}

/// Central slices of `patches` tiled row-major, `cols` per row, 8-bit.
pub fn write_slice_grid(path: &Path, patches: &Tensor, cols: usize) -> Result<()> {
    let slices = central_slices(patches)?;
    let (n, h, w) = (slices.shape()[0], slices.shape()[1], slices.shape()[2]);
    let cols = cols.clamp(1, n.max(1));
    let rows = n.div_ceil(cols);
    let mut img = GrayImage::new((cols * w) as u32, (rows * h) as u32);
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        for (k, &v) in slices.sample(i).iter().enumerate() {
            img.put_pixel((c * w + k % w) as u32, (r * h + k / w) as u32, image::Luma([to_u8(v)]));
        }
    }
    img.save(path)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Pulls exactly `n` patches from `source`.
pub fn collect(source: &mut dyn ImageSource, n: usize, what: &str) -> Result<Tensor> {
    let mut parts = Vec::new();
    let mut got = 0;
    while got < n {
        let b = source
            .next_batch((n - got).min(16))?
            .ok_or_else(|| Error::Sampling(format!("only {got} of {n} {what} patches available")))?;
        got += b.batch();
        parts.push(b);
    }
    let per = parts[0].sample(0).len();
    let mut shape = parts[0].shape().to_vec();
    shape[0] = n;
    let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).take(n * per).collect();
    Ok(Tensor::new(&shape, data))
}

/// `n` real patches: from `real.dir` when set, else sampled from `data.*`.
pub fn real_patches(ctx: &Context, n: usize) -> Result<Tensor> {
    let s = &ctx.settings;
    if let Some(dir) = s.path("real.dir") {
        return collect(&mut TensorSource::new(read_patch_dir(&dir)?), n, "real");
    }
    let scans = load_dataset(s, ctx.seed)?;
    collect(&mut ScanSource::new(&scans, ChaCha8Rng::seed_from_u64(ctx.seed))?, n, "real")
}

/// `n` fake patches: from `fake.dir` when set, else generated from `checkpoint`.
pub fn fake_patches(ctx: &Context, n: usize) -> Result<Tensor> {
    let s = &ctx.settings;
    if let Some(dir) = s.path("fake.dir") {
        return collect(&mut TensorSource::new(read_patch_dir(&dir)?), n, "fake");
    }
    let gen = load_generator(s)?;
    let mut src = GeneratorSource::new(&gen, ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(1)));
    collect(&mut src, n, "fake")
}

/// Settings for commands that take real and fake patches.
pub const PAIR_KEYS: [(&str, &str); 3] = [("real.dir", ""), ("fake.dir", ""), ("checkpoint", "")];
