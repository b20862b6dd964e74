use lunggan_core::discriminator::{Discriminator, DiscriminatorConfig, DEFAULT_TAP};
use lunggan_core::generators::{Family, Generator, GeneratorConfig, ADAIN_SITES, LATENT_DIM};
use lunggan_core::minibatch_tools::sample_latents;
use lunggan_core::nn::{Mode, Pass};
use lunggan_core::{Error, Tensor};
use lunggan_tensor::ops::power_iteration;
use lunggan_tensor::Tape;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL: f64 = 0.125;

fn gen(family: Family, m: f64) -> Generator {
    Generator::new(GeneratorConfig::new(family, m, 5)).unwrap()
}

fn disc(mdmin: bool) -> Discriminator {
    Discriminator::new(DiscriminatorConfig {
        use_mdmin: mdmin,
        width_multiplier: SMALL,
        seed: 8,
    })
    .unwrap()
}

fn latents(n: usize, seed: u64) -> Tensor {
    sample_latents(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn patch_batch(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 32, 64, 64], |_| rng.random_range(-1.0..1.0))
}

fn row(t: &Tensor, i: usize) -> Tensor {
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    Tensor::new(&shape, t.sample(i).to_vec())
}

#[test]
fn output_shape_range_and_determinism() {
    for family in Family::ALL {
        let g = gen(family, SMALL);
        let z1 = latents(1, 1);
        let twice = Tensor::new(&[2, LATENT_DIM], [z1.data(), z1.data()].concat());
        let out = g.generate(&twice).unwrap();
        assert_eq!(out.shape(), &[2, 32, 64, 64], "{family}");
        assert_eq!(out.sample(0), out.sample(1), "{family}: same latent, same patch");
        assert_eq!(g.generate(&twice).unwrap(), out);
        assert!(matches!(g.generate(&Tensor::zeros(&[2, 100])), Err(Error::Shape(_))));
    }
}

#[test]
fn thousand_latents_stay_in_range() {
    for (k, family) in Family::ALL.into_iter().enumerate() {
        let g = gen(family, SMALL);
        let n = if k == 0 { 334 } else { 333 };
        for start in (0..n).step_by(32) {
            let out = g.generate(&latents((n - start).min(32), 100 + start as u64)).unwrap();
            assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)), "{family}");
        }
    }
}

#[test]
fn parameter_counts_at_full_width() {
    for (family, target) in [
        (Family::Dcgan3d, 24.0e6),
        (Family::Stylegan3d, 18.0e6),
        (Family::Biggan3d, 4.0e6),
    ] {
        let n = gen(family, 1.0).count_parameters() as f64;
        assert!((n / target - 1.0).abs() <= 0.15, "{family}: {n} vs {target}");
    }
    let d = Discriminator::new(DiscriminatorConfig {
        use_mdmin: false,
        width_multiplier: 1.0,
        seed: 0,
    })
    .unwrap();
    let n = d.count_parameters() as f64;
    assert!((n / 11.0e6 - 1.0).abs() <= 0.15, "discriminator: {n}");
}

#[test]
fn doubling_width_quadruples_an_inner_conv() {
    let weights = |m: f64| {
        let g = gen(Family::Dcgan3d, m);
        let id = g.store().id("g.deconv2.weight").unwrap();
        g.store().get(id).numel()
    };
    let (a, b) = (weights(0.25), weights(0.5));
    // in · out · k³ with both channel counts doubled
    assert_eq!(a, 64 * 32 * 64);
    assert_eq!(b, 4 * a);
}

#[test]
fn mapping_network_properties() {
    let g = gen(Family::Stylegan3d, SMALL);
    let zero = Tensor::zeros(&[1, LATENT_DIM]);
    let w0 = g.map_latent(&zero).unwrap();
    assert_eq!(w0.shape(), &[1, LATENT_DIM]);
    assert_eq!(g.map_latent(&zero).unwrap(), w0);
    let z = latents(200, 3);
    let w = g.map_latent(&z).unwrap();
    for p in 0..100 {
        assert_ne!(w.sample(2 * p), w.sample(2 * p + 1));
    }
    assert!(matches!(gen(Family::Dcgan3d, SMALL).map_latent(&zero), Err(Error::Unsupported(_))));
}

#[test]
fn degenerate_style_mixing() {
    let g = gen(Family::Stylegan3d, SMALL);
    let w1 = g.map_latent(&latents(2, 10)).unwrap();
    let w2 = g.map_latent(&latents(2, 11)).unwrap();
    let pure1 = g.generate_from_styles(&w1).unwrap();
    let pure2 = g.generate_from_styles(&w2).unwrap();
    assert_eq!(g.generate_mixed(&w1, &w2, ADAIN_SITES).unwrap(), pure1);
    assert_eq!(g.generate_mixed(&w1, &w2, 0).unwrap(), pure2);
    for depth in [1, 5, 10] {
        assert_eq!(g.generate_mixed(&w1, &w1, depth).unwrap(), pure1);
    }
    let mid = g.generate_mixed(&w1, &w2, 5).unwrap();
    assert_ne!(mid, pure1);
    assert_ne!(mid, pure2);
    assert!(matches!(g.generate_mixed(&w1, &w2, ADAIN_SITES + 1), Err(Error::Argument(_))));
    // Styles from z through the mapping network match the plain path.
    assert_eq!(pure1, g.generate(&latents(2, 10)).unwrap());
}

/// Right after each AdaIN site, every (sample, channel) has mean = shift
/// and standard deviation = |scale|.
#[test]
fn adain_statistics_probe() {
    let g = gen(Family::Stylegan3d, SMALL);
    let w = g.map_latent(&latents(2, 4)).unwrap();
    for site in 0..ADAIN_SITES {
        let (act, style) = g.adain_probe(&w, site).unwrap();
        let (b, c) = (act.shape()[0], act.shape()[1]);
        let per: usize = act.shape()[2..].iter().product();
        for i in 0..b {
            for ch in 0..c {
                let v = &act.sample(i)[ch * per..(ch + 1) * per];
                let mean = v.iter().sum::<f64>() / per as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / per as f64;
                let (scale, shift) = (style.sample(i)[ch], style.sample(i)[c + ch]);
                assert!((mean - shift).abs() < 1e-4, "site {site} mean {mean} vs {shift}");
                assert!(
                    (var.sqrt() - scale.abs()).abs() < 1e-4 * scale.abs().max(1.0),
                    "site {site} sd {} vs {scale}",
                    var.sqrt()
                );
            }
        }
    }
}

/// Every spectrally normalised weight divided by its converged estimate
/// has top singular value 1 ± 0.1.
#[test]
fn spectral_normalisation_bounds_the_top_singular_value() {
    let g = gen(Family::Biggan3d, SMALL);
    let big = g.biggan().unwrap();
    for (w, u) in big.spectral_layers() {
        let weight = g.store().get(w);
        let est = power_iteration(weight, g.store().get(u).data(), 50);
        let rows = weight.shape()[0];
        let cols = weight.numel() / rows;
        let m = DMatrix::from_row_slice(rows, cols, weight.data()) / est.sigma;
        let top = m.singular_values().max();
        assert!((top - 1.0).abs() <= 0.1, "{}: {top}", g.store().param(w).name);
    }
}

#[test]
fn attention_starts_as_identity() {
    let g = gen(Family::Biggan3d, SMALL);
    let att = g.biggan().unwrap().attention();
    let c = att.query.in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(&[2, c, 4, 4, 4], |_| rng.random_range(-1.0..1.0));
    let tape = Tape::no_grad();
    let pass = Pass::new(&tape, g.store(), false, Mode::Eval);
    let y = att.forward(&pass, tape.constant(x.clone()));
    assert_eq!(*y.value(), x);
}

/// Gradient of `Σ G(z) ⊙ r` against central differences on sampled
/// parameters with non-negligible gradient.
#[test]
fn generator_gradients_match_finite_differences() {
    for family in Family::ALL {
        let mut g = gen(family, SMALL);
        let z = latents(2, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let r = Tensor::from_fn(&[2, 32, 64, 64], |_| rng.random_range(-1.0..1.0));
        let objective = |g: &Generator| {
            let tape = Tape::no_grad();
            let pass = Pass::new(&tape, g.store(), false, Mode::Frozen);
            let out = g.forward(&pass, tape.constant(z.clone()), None);
            out.value().dot(&r)
        };
        let tape = Tape::new();
        let pass = Pass::new(&tape, g.store(), true, Mode::Frozen);
        let out = g.forward(&pass, tape.constant(z.clone()), None);
        let mut grads = tape.backward(&[(out, r.clone())]);
        let analytic = pass.bound().grads(&mut grads);
        drop(pass);
        let mut candidates = Vec::new();
        for (p, grad) in analytic.iter().enumerate() {
            if let Some(grad) = grad {
                for (k, &v) in grad.data().iter().enumerate() {
                    if v.abs() > 1e-3 {
                        candidates.push((p, k, v));
                    }
                }
            }
        }
        assert!(!candidates.is_empty(), "{family}: all gradients vanish");
        for _ in 0..6 {
            let (p, k, a) = candidates[rng.random_range(0..candidates.len())];
            let id = g.store().iter().nth(p).unwrap().0;
            let h = 1e-5;
            let base = g.store().get(id).data()[k];
            g.store_mut().get_mut(id).data_mut()[k] = base + h;
            let up = objective(&g);
            g.store_mut().get_mut(id).data_mut()[k] = base - h;
            let down = objective(&g);
            g.store_mut().get_mut(id).data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            assert!(rel < 1e-3, "{family} param {p}[{k}]: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn discriminator_shapes_and_taps() {
    let full = Discriminator::new(DiscriminatorConfig {
        use_mdmin: true,
        width_multiplier: 1.0,
        seed: 0,
    })
    .unwrap();
    assert_eq!(full.feature_shape(3, DEFAULT_TAP).unwrap(), vec![3, 512, 2, 4, 4]);
    assert_eq!(full.final_in_channels(), 513);
    let d = disc(false);
    assert_eq!(d.final_in_channels(), 64);
    let x = patch_batch(3, 1);
    assert_eq!(d.discriminate(&x).unwrap().len(), 3);
    let f = d.features_at_layer(&x, DEFAULT_TAP).unwrap();
    assert_eq!(f.shape(), d.feature_shape(3, DEFAULT_TAP).unwrap().as_slice());
    assert_eq!(f.shape(), &[3, 64, 2, 4, 4]);
    assert_eq!(d.features_at_layer(&x, DEFAULT_TAP).unwrap(), f);
    assert!(matches!(d.features_at_layer(&x, 5), Err(Error::Argument(_))));
    assert!(matches!(d.discriminate(&Tensor::zeros(&[2, 32, 64, 63])), Err(Error::Shape(_))));
}

#[test]
fn single_voxel_perturbation_changes_features() {
    let d = disc(false);
    let x = patch_batch(1, 2);
    let mut y = x.clone();
    y.data_mut()[16 * 64 * 64 + 32 * 64 + 32] += 0.5;
    assert_ne!(
        d.features_at_layer(&x, DEFAULT_TAP).unwrap(),
        d.features_at_layer(&y, DEFAULT_TAP).unwrap()
    );
}

#[test]
fn scores_without_mdmin_are_per_sample() {
    let d = disc(false);
    let x = patch_batch(4, 3);
    let s = d.discriminate(&x).unwrap();
    let other = patch_batch(4, 4);
    let mixed = Tensor::new(
        &[4, 32, 64, 64],
        [x.sample(0), other.sample(1), other.sample(2), x.sample(3)].concat(),
    );
    let sm = d.discriminate(&mixed).unwrap();
    assert_eq!(s[0], sm[0]);
    assert_eq!(s[3], sm[3]);
    assert!(s.iter().all(|v| v.is_finite()));
}

#[test]
fn mdmin_scores_follow_the_batch() {
    let d = disc(true);
    let x = patch_batch(4, 5);
    let s = d.discriminate(&x).unwrap();
    // Permutation equivariance.
    let perm = [2, 0, 3, 1];
    let sp = d.discriminate(&x.select(&perm)).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((sp[k] - s[i]).abs() < 1e-12);
    }
    // A collapsed batch gets a zero MDmin channel and different scores.
    let dup = x.select(&[0, 0, 0, 0]);
    let sd = d.discriminate(&dup).unwrap();
    assert_ne!(sd[0], s[0]);
    assert!(matches!(d.discriminate(&row(&x, 0)), Err(Error::Argument(_))));
}
