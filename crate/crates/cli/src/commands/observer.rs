use clap::Args;
use lunggan_core::evaluation::export_observer_study;
use lunggan_core::evaluation::observer::PER_CLASS;
use lunggan_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fake_patches, flag, prepare, real_patches, PAIR_KEYS};
use crate::data::DATA_KEYS;
use crate::Common;

#[derive(Args, Debug)]
pub struct ObserverArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub real: Option<String>,
    #[arg(long)]
    pub fake: Option<String>,
}

pub fn run(a: ObserverArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "real.dir", &a.real);
    flag(&mut flags, "fake.dir", &a.fake);
    let mut defaults = PAIR_KEYS.to_vec();
    defaults.extend_from_slice(&DATA_KEYS);
    let ctx = prepare("observer-export", &a.common, &defaults, flags)?;
    let real = real_patches(&ctx, PER_CLASS)?;
    let fake = fake_patches(&ctx, PER_CLASS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let m = export_observer_study(&real, &fake, &mut rng, &ctx.out)?;
    let mut artifacts: Vec<_> = m.files.iter().map(|f| ctx.out.join(f)).collect();
    artifacts.push(ctx.out.join(&m.key_file));
    artifacts.extend(m.order_files.iter().map(|f| ctx.out.join(f)));
    artifacts.push(ctx.out.join("stimuli.json"));
    ctx.finish(&artifacts)
}
