use lunggan_core::discriminator::{Discriminator, DiscriminatorConfig};
use lunggan_core::losses::{evaluate, relativistic_losses, softplus, standard_gan_losses, LossKind, ScoreBatch};
use lunggan_core::nn::{Mode, Pass};
use lunggan_core::Tensor;
use lunggan_tensor::Tape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

/// Scalar-by-scalar reference with the textbook log-sigmoid.
fn log_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn reference(kind: LossKind, r: &[f64], f: &[f64]) -> (f64, f64) {
    match kind {
        LossKind::Standard => {
            let d = -mean(&r.iter().map(|&x| log_sigmoid(x)).collect::<Vec<_>>())
                - mean(&f.iter().map(|&x| log_sigmoid(-x)).collect::<Vec<_>>());
            let g = -mean(&f.iter().map(|&x| log_sigmoid(x)).collect::<Vec<_>>());
            (d, g)
        }
        LossKind::Relativistic => {
            let (mr, mf) = (mean(r), mean(f));
            let term = |x: &[f64], mx: f64, y: &[f64], my: f64| {
                -mean(&x.iter().map(|&v| log_sigmoid(v - my)).collect::<Vec<_>>())
                    - mean(&y.iter().map(|&v| log_sigmoid(-(v - mx))).collect::<Vec<_>>())
            };
            (term(r, mr, f, mf), term(f, mf, r, mr))
        }
    }
}

fn random_scores(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-4.0..4.0)).collect()
}

#[test]
fn closed_forms() {
    let zeros = ScoreBatch::new(vec![0.0; 4], vec![0.0; 4]);
    let (d, g) = standard_gan_losses(&zeros).unwrap();
    assert!((d - 2.0 * LN2).abs() < 1e-9 && (g - LN2).abs() < 1e-9);
    let (d, g) = relativistic_losses(&zeros).unwrap();
    assert!((d - 2.0 * LN2).abs() < 1e-9 && (g - 2.0 * LN2).abs() < 1e-9);

    let perfect = ScoreBatch::new(vec![30.0; 3], vec![-30.0; 3]);
    assert!(standard_gan_losses(&perfect).unwrap().0.abs() < 1e-9);

    let (d, g) = relativistic_losses(&ScoreBatch::new(vec![1.0, 1.0], vec![0.0, 0.0])).unwrap();
    assert!((d - 2.0 * softplus(-1.0)).abs() < 1e-12);
    assert!((d - 0.626523).abs() < 1e-6 && (g - 2.626523).abs() < 1e-6);

    for c in [-7.5, 0.0, 3.25] {
        let (d, g) = relativistic_losses(&ScoreBatch::new(vec![c; 5], vec![c; 5])).unwrap();
        assert!((d - 2.0 * LN2).abs() < 1e-9 && (g - 2.0 * LN2).abs() < 1e-9);
    }
}

#[test]
fn matches_scalar_reference() {
    for seed in 0..20 {
        let (r, f) = (random_scores(seed, 8), random_scores(seed + 100, 8));
        for kind in [LossKind::Standard, LossKind::Relativistic] {
            let e = evaluate(kind, &ScoreBatch::new(r.clone(), f.clone())).unwrap();
            let (d, g) = reference(kind, &r, &f);
            assert!((e.d_loss - d).abs() < 1e-12 && (e.g_loss - g).abs() < 1e-12, "{kind:?}");
        }
    }
}

#[test]
fn score_gradients_match_finite_differences() {
    let h = 1e-6;
    for seed in 0..5 {
        let (r, f) = (random_scores(seed, 6), random_scores(seed + 50, 6));
        for kind in [LossKind::Standard, LossKind::Relativistic] {
            let e = evaluate(kind, &ScoreBatch::new(r.clone(), f.clone())).unwrap();
            for side in 0..2 {
                for i in 0..6 {
                    let bump = |delta: f64| {
                        let (mut r2, mut f2) = (r.clone(), f.clone());
                        if side == 0 {
                            r2[i] += delta;
                        } else {
                            f2[i] += delta;
                        }
                        let e = evaluate(kind, &ScoreBatch::new(r2, f2)).unwrap();
                        (e.d_loss, e.g_loss)
                    };
                    let (up, down) = (bump(h), bump(-h));
                    let nd = (up.0 - down.0) / (2.0 * h);
                    let ng = (up.1 - down.1) / (2.0 * h);
                    let (ad, ag) = if side == 0 {
                        (e.d_grad.real[i], e.g_grad.real[i])
                    } else {
                        (e.d_grad.fake[i], e.g_grad.fake[i])
                    };
                    for (a, n) in [(ad, nd), (ag, ng)] {
                        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                        assert!(rel < 1e-6, "{kind:?} side {side} i {i}: {a} vs {n}");
                    }
                }
            }
        }
    }
}

#[test]
fn stable_at_extreme_scores() {
    for kind in [LossKind::Standard, LossKind::Relativistic] {
        let e = evaluate(kind, &ScoreBatch::new(vec![100.0, -100.0], vec![-100.0, 100.0])).unwrap();
        assert!(e.d_loss.is_finite() && e.g_loss.is_finite());
        assert!(e.d_grad.real.iter().chain(&e.g_grad.fake).all(|v| v.is_finite()));
    }
}

/// `L_D` through a width-1/8 discriminator against central differences of
/// the full forward pass.
#[test]
fn discriminator_loss_gradients_match_finite_differences() {
    let mut d = Discriminator::new(DiscriminatorConfig {
        use_mdmin: true,
        width_multiplier: 0.125,
        seed: 4,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let real = Tensor::from_fn(&[2, 32, 64, 64], |_| rng.random_range(-1.0..1.0));
    let fake = Tensor::from_fn(&[2, 32, 64, 64], |_| rng.random_range(-1.0..1.0));
    let loss = |d: &Discriminator| {
        let s = ScoreBatch::new(d.discriminate(&real).unwrap(), d.discriminate(&fake).unwrap());
        evaluate(LossKind::Relativistic, &s).unwrap().d_loss
    };
    let tape = Tape::new();
    let pass = Pass::new(&tape, d.store(), true, Mode::Eval);
    let sr = d.forward(&pass, tape.constant(real.clone())).unwrap();
    let sf = d.forward(&pass, tape.constant(fake.clone())).unwrap();
    let e = evaluate(
        LossKind::Relativistic,
        &ScoreBatch::new(sr.value().data().to_vec(), sf.value().data().to_vec()),
    )
    .unwrap();
    let mut grads = tape.backward(&[
        (sr, Tensor::new(&[2], e.d_grad.real.clone())),
        (sf, Tensor::new(&[2], e.d_grad.fake.clone())),
    ]);
    let analytic = pass.bound().grads(&mut grads);
    drop(pass);
    let mut checked = 0;
    for (p, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let id = d.store().iter().nth(p).unwrap().0;
        // The largest few entries of each tensor.
        let mut order: Vec<usize> = (0..grad.numel()).collect();
        order.sort_by(|&a, &b| grad.data()[b].abs().total_cmp(&grad.data()[a].abs()));
        for &k in order.iter().take(3) {
            let a = grad.data()[k];
            // Small enough that no LeakyReLU kink is crossed; the network is
            // piecewise smooth, so truncation error stays negligible.
            let h = 1e-7;
            let base = d.store().get(id).data()[k];
            d.store_mut().get_mut(id).data_mut()[k] = base + h;
            let up = loss(&d);
            d.store_mut().get_mut(id).data_mut()[k] = base - h;
            let down = loss(&d);
            d.store_mut().get_mut(id).data_mut()[k] = base;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs());
            assert!(rel < 1e-3, "param {p}[{k}]: analytic {a} numeric {n}");
            checked += 1;
        }
    }
    assert!(checked >= 15);
}

proptest! {
    #[test]
    fn relativistic_shift_invariance(
        r in prop::collection::vec(-10.0f64..10.0, 1..10),
        f in prop::collection::vec(-10.0f64..10.0, 1..10),
        c in -50.0f64..50.0,
    ) {
        let (d, g) = relativistic_losses(&ScoreBatch::new(r.clone(), f.clone())).unwrap();
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let (ds, gs) = relativistic_losses(&ScoreBatch::new(shift(&r), shift(&f))).unwrap();
        prop_assert!((d - ds).abs() < 1e-9 && (g - gs).abs() < 1e-9);
    }

    #[test]
    fn relativistic_role_swap(
        r in prop::collection::vec(-10.0f64..10.0, 1..10),
        f in prop::collection::vec(-10.0f64..10.0, 1..10),
    ) {
        let (d, _) = relativistic_losses(&ScoreBatch::new(r.clone(), f.clone())).unwrap();
        let (_, g) = relativistic_losses(&ScoreBatch::new(f, r)).unwrap();
        prop_assert!((d - g).abs() < 1e-12);
    }

    #[test]
    fn standard_losses_are_nonnegative(
        r in prop::collection::vec(-100.0f64..100.0, 1..10),
        f in prop::collection::vec(-100.0f64..100.0, 1..10),
    ) {
        let (d, g) = standard_gan_losses(&ScoreBatch::new(r, f)).unwrap();
        prop_assert!(d >= 0.0 && g >= 0.0 && d.is_finite() && g.is_finite());
    }
}
