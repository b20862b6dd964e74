use clap::Args;
use lunggan_core::latent_analysis::{
    embed_latents, label_with_branch_counts, plot_embedding, write_embedding_csv, ExternalReducer, Pca, Reducer,
};
use lunggan_core::parallel;
use lunggan_core::structure_analysis::mip::view_angles;
use lunggan_core::structure_analysis::report::{plot_roc, write_branch_counts, write_roc_json, BranchCountRow};
use lunggan_core::structure_analysis::{
    branch_count_roc, count_branch_points, render_mip, skeleton_of, DEFAULT_THRESHOLD, Skeleton,
};
use lunggan_core::{Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fake_patches, flag, load_generator, prepare, real_patches, PAIR_KEYS};
use crate::data::DATA_KEYS;
use crate::Common;

#[derive(Args, Debug)]
pub struct RocArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub real: Option<String>,
    #[arg(long)]
    pub fake: Option<String>,
    /// Patches per class.
    #[arg(long)]
    pub n: Option<usize>,
    /// Bootstrap resamples for the AUC interval.
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Binarisation threshold on the [-1, 1] intensity scale.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
}

fn skeletons(patches: &Tensor, threshold: f64) -> Result<Vec<Skeleton>> {
    let dims = &patches.shape()[1..];
    parallel::map_indices(patches.batch(), |i| {
        skeleton_of(&Tensor::new(dims, patches.sample(i).to_vec()), threshold)
    })
    .into_iter()
    .collect()
}

pub fn run_roc(a: RocArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "real.dir", &a.real);
    flag(&mut flags, "fake.dir", &a.fake);
    flag(&mut flags, "roc.n", &a.n);
    flag(&mut flags, "roc.n_boot", &a.n_boot);
    flag(&mut flags, "structure.threshold", &a.threshold);
    let threshold = DEFAULT_THRESHOLD.to_string();
    let mut defaults = vec![
        ("roc.n", "1000"),
        ("roc.n_boot", "1000"),
        ("roc.mip_views", "4"),
        ("roc.mip_examples", "2"),
        ("structure.threshold", threshold.as_str()),
    ];
    defaults.extend_from_slice(&PAIR_KEYS);
    defaults.extend_from_slice(&DATA_KEYS);
    let ctx = prepare("skeleton-roc", &a.common, &defaults, flags)?;
    let s = &ctx.settings;
    let n: usize = s.get("roc.n")?;
    if n == 0 {
        return Err(Error::config("roc.n", "must be at least 1"));
    }
    let thr: f64 = s.get("structure.threshold")?;
    let n_boot: usize = s.get("roc.n_boot")?;
    let views: usize = s.get("roc.mip_views")?;
    let examples: usize = s.get("roc.mip_examples")?;

    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let mut rows = Vec::new();
    let mut counts = [Vec::new(), Vec::new()];
    let mut artifacts = Vec::new();
    for (k, label) in ["real", "fake"].into_iter().enumerate() {
        let patches = if k == 0 { real_patches(&ctx, n)? } else { fake_patches(&ctx, n)? };
        let skels = skeletons(&patches, thr)?;
        for (i, sk) in skels.iter().enumerate() {
            let c = count_branch_points(&sk.mask).count as u32;
            counts[k].push(c);
            rows.push(BranchCountRow {
                patch_id: format!("{label}-{i:05}"),
                source: label.into(),
                count: c,
            });
        }
        for (i, sk) in skels.iter().take(examples).enumerate() {
            for (v, mip) in render_mip(&sk.mask, &view_angles(views))?.iter().enumerate() {
                let p = ctx.out.join(format!("mip_{label}_{i:02}_view{v}.png"));
                mip.save_png(&p)?;
                artifacts.push(p);
            }
        }
    }
    let roc = branch_count_roc(&counts[0], &counts[1], n_boot, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    let csv_path = ctx.out.join("branch_counts.csv");
    write_branch_counts(&csv_path, &rows)?;
    let json = ctx.out.join("roc.json");
    write_roc_json(&json, &roc)?;
    let png = ctx.out.join("roc.png");
    plot_roc(&png, &roc, 400)?;
    println!("AUC = {:.4} (95% CI {:.4}–{:.4})", roc.auc, roc.auc_ci.0, roc.auc_ci.1);
    artifacts.splice(0..0, [csv_path, json, png]);
    ctx.finish(&artifacts)
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Latents to embed.
    #[arg(long)]
    pub n: Option<usize>,
    /// Points (from the start) labelled with branch counts.
    #[arg(long)]
    pub labelled: Option<usize>,
    /// `pca` or `external:<program> [args…]`.
    #[arg(long)]
    pub reducer: Option<String>,
}

fn reducer(spec: &str, work_dir: &std::path::Path) -> Result<Box<dyn Reducer>> {
    if spec == "pca" {
        return Ok(Box::new(Pca));
    }
    let cmd = spec
        .strip_prefix("external:")
        .ok_or_else(|| Error::config("embed.reducer", format!("expected pca or external:<program>, got {spec:?}")))?;
    let mut parts = cmd.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::config("embed.reducer", "external reducer needs a program"))?;
    Ok(Box::new(ExternalReducer {
        program: program.into(),
        args: parts.map(String::from).collect(),
        work_dir: work_dir.to_path_buf(),
    }))
}

pub fn run_embed(a: EmbedArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "embed.n", &a.n);
    flag(&mut flags, "embed.labelled", &a.labelled);
    flag(&mut flags, "embed.reducer", &a.reducer);
    let threshold = DEFAULT_THRESHOLD.to_string();
    let ctx = prepare(
        "umap-export",
        &a.common,
        &[
            ("checkpoint", ""),
            ("embed.n", "50000"),
            ("embed.labelled", "1000"),
            ("embed.reducer", "pca"),
            ("structure.threshold", threshold.as_str()),
        ],
        flags,
    )?;
    let s = &ctx.settings;
    let n: usize = s.get("embed.n")?;
    let labelled: usize = s.get("embed.labelled")?;
    if labelled > n {
        return Err(Error::config("embed.labelled", format!("{labelled} exceeds embed.n = {n}")));
    }
    let thr: f64 = s.get("structure.threshold")?;
    let gen = load_generator(s)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let mut red = reducer(s.raw("embed.reducer"), &ctx.out.join("reducer"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut emb = embed_latents(&gen, n, red.as_mut(), &mut rng)?;
    let ids: Vec<usize> = (0..labelled).collect();
    label_with_branch_counts(&gen, &mut emb, &ids, thr)?;
    let csv_path = ctx.out.join("embedding.csv");
    write_embedding_csv(&csv_path, &emb.points)?;
    let png = ctx.out.join("embedding.png");
    plot_embedding(&png, &emb.points, 600)?;
    ctx.finish(&[csv_path, png])
}
