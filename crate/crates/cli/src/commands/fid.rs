use clap::Args;
use lunggan_core::evaluation::sources::{GeneratorSource, ScanSource};
use lunggan_core::evaluation::{compute_fid, ConvStackExtractor, ImageSource, InputRank, TensorSource};
use lunggan_core::patch_pipeline::CtVolume;
use lunggan_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flag, load_generator, prepare, write_json, Context};
use crate::data::{load_dataset, read_patch_dir, DATA_KEYS};
use crate::Common;

#[derive(Args, Debug)]
pub struct FidArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of real `.mhd` patches (else patches are sampled from `data.*`).
    #[arg(long)]
    pub real: Option<String>,
    /// Directory of fake `.mhd` patches (else generated from `--checkpoint`).
    #[arg(long)]
    pub fake: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Images per side.
    #[arg(long)]
    pub n: Option<usize>,
    /// `random-conv:<seed>` or a weight file.
    #[arg(long)]
    pub extractor: Option<String>,
}

/// Holds whatever the chosen sources borrow from.
enum Backing {
    Patches(lunggan_core::Tensor),
    Scans(Vec<CtVolume>),
    Generator(lunggan_core::generators::Generator),
}

fn backing(ctx: &Context, dir_key: &str, real: bool) -> Result<Backing> {
    let s = &ctx.settings;
    if let Some(dir) = s.path(dir_key) {
        return Ok(Backing::Patches(read_patch_dir(&dir)?));
    }
    if real {
        Ok(Backing::Scans(load_dataset(s, ctx.seed)?))
    } else if s.path("checkpoint").is_some() {
        Ok(Backing::Generator(load_generator(s)?))
    } else {
        Err(Error::config(dir_key, "required (or set checkpoint)"))
    }
}

fn source(b: &Backing, seed: u64) -> Result<Box<dyn ImageSource + '_>> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match b {
        Backing::Patches(t) => Box::new(TensorSource::new(t.clone())),
        Backing::Scans(v) => Box::new(ScanSource::new(v, rng)?),
        Backing::Generator(g) => Box::new(GeneratorSource::new(g, rng)),
    })
}

pub fn run(a: FidArgs, volumetric: bool) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "real.dir", &a.real);
    flag(&mut flags, "fake.dir", &a.fake);
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "fid.n", &a.n);
    flag(&mut flags, "fid.extractor", &a.extractor);
    let mut defaults = vec![
        ("real.dir", ""),
        ("fake.dir", ""),
        ("checkpoint", ""),
        ("fid.n", "10000"),
        ("fid.extractor", "random-conv:0"),
    ];
    defaults.extend_from_slice(&DATA_KEYS);
    let name = if volumetric { "fid-3d" } else { "fid" };
    let ctx = prepare(name, &a.common, &defaults, flags)?;
    let s = &ctx.settings;
    let n: usize = s.get("fid.n")?;
    if n < 2 {
        return Err(Error::config("fid.n", "must be at least 2"));
    }
    let rank = if volumetric { InputRank::Volume3d } else { InputRank::Slice2d };
    let extractor = ConvStackExtractor::resolve(s.raw("fid.extractor"), rank)?;
    let real = backing(&ctx, "real.dir", true)?;
    let fake = backing(&ctx, "fake.dir", false)?;
    let result = compute_fid(
        source(&real, ctx.seed)?.as_mut(),
        source(&fake, ctx.seed.wrapping_add(1))?.as_mut(),
        &extractor,
        n,
    )?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let json = ctx.out.join("fid.json");
    write_json(&json, &result)?;
    let csv_path = ctx.out.join("fid.csv");
    let text = format!(
        "metric,value,n_real,n_fake,extractor\n{name},{},{},{},{}\n",
        result.value, result.n_real, result.n_fake, result.extractor.name
    );
    std::fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;
    println!("{name} = {:.6}", result.value);
    ctx.finish(&[json, csv_path])
}
