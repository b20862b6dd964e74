use clap::Args;
use lunggan_core::patch_pipeline::io::{write_annotations, write_split_manifest};
use lunggan_core::patch_pipeline::phantom::{phantom_scan, PhantomConfig};
use lunggan_core::{Error, Result};

use super::{flag, prepare};
use crate::Common;

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of synthetic scans.
    #[arg(long)]
    pub scans: Option<usize>,
}

/// Writes synthetic scans (with lung and nodule masks), an annotation CSV
/// and a split manifest, in the layout `train --data-dir` reads.
pub fn run(a: PhantomArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "phantom.scans", &a.scans);
    let ctx = prepare("phantom", &a.common, &[("phantom.scans", "4")], flags)?;
    let n: usize = ctx.settings.get("phantom.scans")?;
    if n == 0 {
        return Err(Error::config("phantom.scans", "must be at least 1"));
    }
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let cfg = PhantomConfig::default();
    let mut annotations = Vec::new();
    let mut ids = Vec::new();
    let mut artifacts = Vec::new();
    for i in 0..n {
        let id = format!("phantom-{i:03}");
        let (vol, notes) = phantom_scan(&id, ctx.seed.wrapping_add(i as u64 * 7919), &cfg);
        vol.save(&ctx.out)?;
        artifacts.push(ctx.out.join(format!("{id}.mhd")));
        annotations.push((id.clone(), notes));
        ids.push(id);
    }
    let ann = ctx.out.join("annotations.csv");
    write_annotations(&ann, &annotations)?;
    let split = ctx.out.join("split.txt");
    write_split_manifest(&split, &ids)?;
    artifacts.extend([ann, split]);
    ctx.finish(&artifacts)
}
