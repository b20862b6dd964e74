use clap::Args;
use lunggan_core::generators::Family;
use lunggan_core::losses::LossKind;
use lunggan_core::minibatch_tools::LargeEbsConfig;
use lunggan_core::patch_pipeline::MINIBATCHES_PER_SCAN;
use lunggan_core::training::{train, TrainConfig};
use lunggan_core::{Error, Result};

use super::{flag, prepare, switch};
use crate::data::{load_dataset, DATA_KEYS};
use crate::Common;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// dcgan3d, stylegan3d or biggan3d.
    #[arg(long)]
    pub family: Option<String>,
    /// Channel-width multiplier for both networks.
    #[arg(long)]
    pub width: Option<f64>,
    /// Add the MDmin channel to the discriminator.
    #[arg(long)]
    pub mdmin: bool,
    /// Enable largeEBS batch selection.
    #[arg(long)]
    pub large_ebs: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Directory of `.mhd` scans with `_lung`/`_nodule` masks.
    #[arg(long)]
    pub data_dir: Option<String>,
    /// Train on this many synthetic phantom scans instead of `--data-dir`.
    #[arg(long)]
    pub phantom_scans: Option<usize>,
    /// FID samples per epoch (0 disables).
    #[arg(long)]
    pub fid_samples: Option<usize>,
}

const DEFAULTS: [(&str, &str); 16] = [
    ("generator.family", "dcgan3d"),
    ("generator.width_multiplier", "1.0"),
    ("discriminator.mdmin", "false"),
    ("largeebs.enabled", "false"),
    ("largeebs.warmup_epochs", "5"),
    ("largeebs.candidate_factor", "4"),
    ("training.loss", "relativistic"),
    ("training.learning_rate", "0.0001"),
    ("training.adam_beta1", "0.5"),
    ("training.adam_beta2", "0.999"),
    ("training.epochs", "20"),
    ("training.batch_size", "48"),
    // `auto` = batch size × minibatches per scan.
    ("training.patches_per_scan", "auto"),
    ("training.style_mixing_probability", "0.9"),
    ("fid.samples", "10000"),
    ("fid.extractor", "random-conv:0"),
];

pub fn run(a: TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "generator.family", &a.family);
    flag(&mut flags, "generator.width_multiplier", &a.width);
    switch(&mut flags, "discriminator.mdmin", a.mdmin);
    switch(&mut flags, "largeebs.enabled", a.large_ebs);
    flag(&mut flags, "training.epochs", &a.epochs);
    flag(&mut flags, "training.batch_size", &a.batch_size);
    flag(&mut flags, "data.dir", &a.data_dir);
    flag(&mut flags, "data.phantom_scans", &a.phantom_scans);
    flag(&mut flags, "fid.samples", &a.fid_samples);
    let mut defaults = DEFAULTS.to_vec();
    defaults.extend_from_slice(&DATA_KEYS);
    let ctx = prepare("train", &a.common, &defaults, flags)?;
    let s = &ctx.settings;

    let family: Family = s.raw("generator.family").parse()?;
    let mut config = TrainConfig::new(family, s.bool("discriminator.mdmin")?, false, ctx.seed);
    let width: f64 = s.get("generator.width_multiplier")?;
    config.generator.width_multiplier = width;
    config.discriminator.width_multiplier = width;
    config.loss = s.raw("training.loss").parse::<LossKind>()?;
    config.learning_rate = s.get("training.learning_rate")?;
    config.adam_beta1 = s.get("training.adam_beta1")?;
    config.adam_beta2 = s.get("training.adam_beta2")?;
    config.epochs = s.get("training.epochs")?;
    config.batch_size = s.get("training.batch_size")?;
    config.patches_per_scan = match s.raw("training.patches_per_scan") {
        "auto" => config.batch_size * MINIBATCHES_PER_SCAN,
        _ => s.get("training.patches_per_scan")?,
    };
    config.style_mixing_probability = s.get("training.style_mixing_probability")?;
    if s.bool("largeebs.enabled")? {
        let factor: usize = s.get("largeebs.candidate_factor")?;
        if factor < 1 {
            return Err(Error::config("largeebs.candidate_factor", "must be at least 1"));
        }
        let mut l = LargeEbsConfig::for_batch(config.batch_size);
        l.candidates = factor * config.batch_size;
        l.warmup_epochs = s.get("largeebs.warmup_epochs")?;
        config.large_ebs = Some(l);
    }
    config.fid.samples = s.get("fid.samples")?;
    config.fid.extractor = s.raw("fid.extractor").to_string();
    config.validate()?;

    let dataset = load_dataset(s, ctx.seed)?;
    let run_dir = ctx.out.join("run");
    eprintln!(
        "training {family} on {} scans: {} epochs × {} iterations",
        dataset.len(),
        config.epochs,
        dataset.len() * MINIBATCHES_PER_SCAN
    );
    let run = train(&config, &dataset, Some(&run_dir), &mut |e| {
        eprintln!(
            "epoch {:>3}: d_loss {:.4} g_loss {:.4} fid {} ({:.1}s)",
            e.epoch,
            e.d_loss,
            e.g_loss,
            e.fid.map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into()),
            e.seconds
        );
    })?;
    let trace = ctx.out.join("loss_trace.csv");
    let mut w = csv::Writer::from_path(&trace).map_err(|e| Error::format("loss trace", e.to_string()))?;
    for l in &run.loss_trace {
        w.serialize(l).map_err(|e| Error::format("loss trace", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&trace, e))?;
    let mut artifacts = vec![run_dir.join("config.json"), run_dir.join("metrics.csv"), trace];
    artifacts.extend(run.epochs.iter().filter_map(|e| e.checkpoint.clone()));
    ctx.finish(&artifacts)?;
    // The run directory is itself an artifact directory.
    crate::manifest::write_manifest(&run_dir, "train", s, ctx.seed, ctx.deterministic, &ctx.device, &artifacts)?;
    Ok(())
}
