use lunggan_core::checkpoint::{load_checkpoint, save_checkpoint};
use lunggan_core::discriminator::{Discriminator, DiscriminatorConfig, DEFAULT_TAP};
use lunggan_core::generators::{Family, Generator, GeneratorConfig};
use lunggan_core::latent_analysis::{embed_latents, label_with_branch_counts, Pca};
use lunggan_core::minibatch_tools::{mdmin_scores, pairwise_l1, sample_latents};
use lunggan_core::patch_pipeline::phantom::{phantom_dataset, PhantomConfig};
use lunggan_core::patch_pipeline::CtVolume;
use lunggan_core::structure_analysis::{count_branch_points, skeleton_of};
use lunggan_core::training::{read_run_fids, train, welch_t_test, TrainConfig, TrainedRun};
use lunggan_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

fn small(family: Family, mdmin: bool, large_ebs: bool, seed: u64, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(family, mdmin, large_ebs, seed).scaled(0.125, 2);
    c.epochs = epochs;
    c.fid.samples = 0;
    if let Some(l) = &mut c.large_ebs {
        l.warmup_epochs = 1;
    }
    c
}

fn phantoms(n: usize) -> Vec<CtVolume> {
    phantom_dataset(n, 1, &PhantomConfig::default())
}

fn all_finite(run: &TrainedRun) -> bool {
    run.loss_trace.iter().all(|s| s.d_loss.is_finite() && s.g_loss.is_finite())
        && run.epochs.iter().all(|e| e.d_loss.is_finite() && e.g_loss.is_finite())
}

#[test]
fn smoke_run_writes_a_reloadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&small(Family::Dcgan3d, false, false, 1, 1), &phantoms(4), Some(dir.path()), &mut |_| {}).unwrap();
    assert_eq!(run.iterations, 56);
    assert!(all_finite(&run));
    let ckpt = run.epochs[0].checkpoint.clone().unwrap();
    let back = load_checkpoint(&ckpt).unwrap();
    assert_eq!(back.epoch, Some(1));
    let z = sample_latents(3, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(back.generator.generate(&z).unwrap(), run.generator.generate(&z).unwrap());
    let fids = read_run_fids(dir.path()).unwrap();
    assert_eq!(fids.fids.len(), 1);
    for f in ["config.json", "seed.txt", "metrics.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn checkpoints_round_trip_bit_exact_for_every_family() {
    let dir = tempfile::tempdir().unwrap();
    let z = sample_latents(2, &mut ChaCha8Rng::seed_from_u64(3));
    for family in Family::ALL {
        let g = Generator::new(GeneratorConfig::new(family, 0.125, 8)).unwrap();
        let d = Discriminator::new(DiscriminatorConfig {
            use_mdmin: true,
            width_multiplier: 0.125,
            seed: 9,
        })
        .unwrap();
        let p = dir.path().join(format!("{family}.ckpt"));
        save_checkpoint(&p, &g, Some(&d), None).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.generator.generate(&z).unwrap(), g.generate(&z).unwrap(), "{family}");
        let x = g.generate(&z).unwrap();
        assert_eq!(back.discriminator.unwrap().discriminate(&x).unwrap(), d.discriminate(&x).unwrap());
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let data = phantoms(1);
    let cfg = small(Family::Dcgan3d, true, true, 7, 1);
    let a = train(&cfg, &data, None, &mut |_| {}).unwrap();
    let b = train(&cfg, &data, None, &mut |_| {}).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.epochs[0].d_loss, b.epochs[0].d_loss);
}

#[test]
fn large_ebs_waits_for_the_warmup_boundary() {
    let run = train(&small(Family::Dcgan3d, true, true, 2, 2), &phantoms(1), None, &mut |_| {}).unwrap();
    assert_eq!(run.selections.len(), 28);
    assert!(run.selections[..14].iter().all(|&s| s == 0));
    assert!(run.selections[14..].iter().all(|&s| s == 2));
    let plain = train(&small(Family::Dcgan3d, true, false, 2, 1), &phantoms(1), None, &mut |_| {}).unwrap();
    assert!(plain.selections.iter().all(|&s| s == 0));
}

#[test]
fn losses_stay_finite_across_seeds() {
    let data = phantoms(1);
    for seed in 0..5 {
        let run = train(&small(Family::Dcgan3d, true, false, seed, 1), &data, None, &mut |_| {}).unwrap();
        assert!(all_finite(&run), "seed {seed}");
    }
}

/// A generator pinned to a tiny neighbourhood of one latent is near-constant;
/// its mean MDmin at the tap collapses relative to diverse latents.
#[test]
fn mdmin_detects_a_collapsed_generator() {
    let g = Generator::new(GeneratorConfig::new(Family::Dcgan3d, 0.125, 5)).unwrap();
    let d = Discriminator::new(DiscriminatorConfig {
        use_mdmin: true,
        width_multiplier: 0.125,
        seed: 6,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let diverse = sample_latents(8, &mut rng);
    let z0 = sample_latents(1, &mut rng);
    let collapsed = Tensor::from_fn(&[8, 512], |i| z0.data()[i % 512] + 0.001 * rng.sample::<f64, _>(StandardNormal));
    let mean_mdmin = |z: &Tensor| {
        let f = d.features_at_layer(&g.generate(z).unwrap(), DEFAULT_TAP).unwrap();
        let m = mdmin_scores(&pairwise_l1(&f).unwrap()).unwrap();
        m.iter().sum::<f64>() / m.len() as f64
    };
    let (c, v) = (mean_mdmin(&collapsed), mean_mdmin(&diverse));
    assert!(c < 0.1 * v, "collapsed {c} diverse {v}");
}

/// Density of Student's t with `df` degrees of freedom.
fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Two-sided p by composite Simpson integration of the density over [0, |t|].
fn reference_p(t: f64, df: f64) -> f64 {
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = t_density(0.0, df) + t_density(t.abs(), df);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * t_density(i as f64 * h, df);
    }
    (1.0 - 2.0 * s * h / 3.0).max(0.0)
}

fn reference_welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0), n)
    };
    let ((ma, va, na), (mb, vb, nb)) = (stats(a), stats(b));
    let t = (ma - mb) / (va / na + vb / nb).sqrt();
    let df = (va / na + vb / nb).powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, reference_p(t, df))
}

#[test]
fn welch_matches_independent_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let na = rng.random_range(2..12);
        let nb = rng.random_range(2..12);
        let shift = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..na).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = welch_t_test(&a, &b).unwrap();
        let (t, p) = reference_welch(&a, &b);
        assert!((r.t - t).abs() < 1e-9, "t {} vs {t}", r.t);
        assert!((r.p - p).abs() < 1e-6, "p {} vs {p}", r.p);
    }
}

/// Five minima with the given mean and sample standard deviation.
fn minima(mean: f64, sd: f64) -> Vec<f64> {
    let unit = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let s = (10.0f64 / 4.0).sqrt();
    unit.iter().map(|u| mean + sd * u / s).collect()
}

#[test]
fn welch_separates_table_consistent_groups() {
    let base = minima(136.9, 10.7);
    let mdmin = minima(44.8, 4.2);
    let r = welch_t_test(&base, &mdmin).unwrap();
    assert!(r.p < 1e-4 && r.t > 0.0, "{r:?}");
    let dcgan = welch_t_test(&minima(93.1, 3.1), &minima(91.0, 9.0)).unwrap();
    assert!(dcgan.p > 0.05);
}

#[test]
fn embedding_labels_match_regenerated_counts() {
    let g = Generator::new(GeneratorConfig::new(Family::Dcgan3d, 0.125, 13)).unwrap();
    let mut emb = embed_latents(&g, 12, &mut Pca, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let again = embed_latents(&g, 12, &mut Pca, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(emb.points, again.points);
    label_with_branch_counts(&g, &mut emb, &[0, 4, 7], 0.0).unwrap();
    for p in &emb.points {
        if [0, 4, 7].contains(&p.latent_id) {
            let patch = g.generate(&emb.latents.select(&[p.latent_id])).unwrap();
            let single = Tensor::new(&patch.shape()[1..], patch.data().to_vec());
            let want = count_branch_points(&skeleton_of(&single, 0.0).unwrap().mask).count as u32;
            assert_eq!(p.branch_count, Some(want));
        } else {
            assert_eq!(p.branch_count, None);
        }
    }
    assert!(label_with_branch_counts(&g, &mut emb, &[12], 0.0).is_err());
}

#[test]
fn constant_generator_gives_equal_labels() {
    let mut g = Generator::new(GeneratorConfig::new(Family::Dcgan3d, 0.125, 14)).unwrap();
    let ids: Vec<_> = g.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        if g.store().param(id).name.ends_with("weight") {
            g.store_mut().get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut emb = embed_latents(&g, 10, &mut Pca, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    label_with_branch_counts(&g, &mut emb, &[0, 1, 2, 3], 0.0).unwrap();
    let labels: Vec<_> = emb.points.iter().filter_map(|p| p.branch_count).collect();
    assert_eq!(labels.len(), 4);
    assert!(labels.iter().all(|&l| l == labels[0]));
}
