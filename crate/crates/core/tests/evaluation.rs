use lunggan_core::evaluation::observer::read_observer_key;
use lunggan_core::evaluation::{
    central_slice, central_slices, compute_fid, export_observer_study, fid_from_features, frechet_distance,
    gaussian_stats, slerp, ConvStackExtractor, FeatureStats, TensorSource,
};
use lunggan_core::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_features(n: usize, d: usize, mix: &DMatrix<f64>, shift: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x = mix * nalgebra::DVector::from_vec(e);
        data.extend(x.iter().map(|v| v + shift));
    }
    Tensor::new(&[n, d], data)
}

fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt())
}

fn rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    random_matrix(d, rng).qr().q()
}

fn rotate(f: &Tensor, q: &DMatrix<f64>) -> Tensor {
    let (n, d) = (f.shape()[0], f.shape()[1]);
    let m = DMatrix::from_row_slice(n, d, f.data()) * q.transpose();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend(m.row(i).iter());
    }
    Tensor::new(&[n, d], data)
}

fn diag_stats(mu: Vec<f64>, var: &[f64]) -> FeatureStats {
    let d = var.len();
    let mut sigma = vec![0.0; d * d];
    for (i, v) in var.iter().enumerate() {
        sigma[i * d + i] = *v;
    }
    FeatureStats { mu, sigma, n: 100 }
}

#[test]
fn central_slice_convention() {
    let p = Tensor::from_fn(&[32, 64, 64], |i| (i / (64 * 64)) as f64 / 31.0);
    let s = central_slice(&p).unwrap();
    assert_eq!(s.shape(), &[64, 64]);
    assert!(s.data().iter().all(|&v| v == 16.0 / 31.0));
    // Reversing depth moves the centre to source slice 15.
    let rev = Tensor::from_fn(&[32, 64, 64], |i| (31 - i / (64 * 64)) as f64 / 31.0);
    assert!(central_slice(&rev).unwrap().data().iter().all(|&v| v == 15.0 / 31.0));
    let batch = Tensor::stack(&[p.clone(), rev]);
    assert_eq!(central_slices(&batch).unwrap().shape(), &[2, 64, 64]);
}

#[test]
fn gaussian_stats_examples() {
    let s = gaussian_stats(&Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 2.0])).unwrap();
    assert_eq!(s.mu, vec![1.0, 1.0]);
    assert_eq!(s.sigma, vec![2.0, 2.0, 2.0, 2.0]);
    let same = gaussian_stats(&Tensor::new(&[3, 2], [1.5, -2.0].repeat(3))).unwrap();
    assert!(same.sigma.iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d) = (100, 5);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let s = gaussian_stats(&Tensor::new(&[n, d], x.clone())).unwrap();
    let mu: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
    for a in 0..d {
        assert!((s.mu[a] - mu[a]).abs() < 1e-12);
        for b in 0..d {
            let c = (0..n).map(|i| (x[i * d + a] - mu[a]) * (x[i * d + b] - mu[b])).sum::<f64>() / (n - 1) as f64;
            assert!((s.sigma[a * d + b] - c).abs() < 1e-12);
        }
    }
}

#[test]
fn frechet_closed_forms() {
    let a = diag_stats(vec![0.0], &[1.0]);
    let b = diag_stats(vec![1.0], &[4.0]);
    assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    let a = diag_stats(vec![0.5; 3], &[1.0, 4.0, 9.0]);
    let b = diag_stats(vec![0.5; 3], &[4.0, 9.0, 16.0]);
    assert!((frechet_distance(&a, &b).unwrap() - 3.0).abs() < 1e-9);
}

/// Commuting covariances: the trace term is Σ(√λ − √λ')² over matched
/// eigenvalues in a shared eigenbasis.
#[test]
fn commuting_covariances_reduce_to_eigenvalue_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 6;
    let q = rotation(d, &mut rng);
    let l1: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
    let l2: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
    let build = |l: &[f64]| {
        let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(l.to_vec())) * q.transpose();
        FeatureStats {
            mu: vec![0.0; d],
            sigma: m.transpose().as_slice().to_vec(),
            n: 10,
        }
    };
    let want: f64 = l1.iter().zip(&l2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    assert!((frechet_distance(&build(&l1), &build(&l2)).unwrap() - want).abs() < 1e-9);
}

#[test]
fn identical_image_sets_score_zero_in_both_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::from_fn(&[12, 32, 64, 64], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::from_fn(&[12, 32, 64, 64], |_| rng.random_range(-1.0..1.0));
    for ex in [ConvStackExtractor::random_2d(3), ConvStackExtractor::random_3d(3)] {
        let same = compute_fid(&mut TensorSource::new(a.clone()), &mut TensorSource::new(a.clone()), &ex, 12).unwrap();
        assert!(same.value.abs() <= 1e-6, "{}", same.value);
        let ab = compute_fid(&mut TensorSource::new(a.clone()), &mut TensorSource::new(b.clone()), &ex, 12).unwrap();
        let ba = compute_fid(&mut TensorSource::new(b.clone()), &mut TensorSource::new(a.clone()), &ex, 12).unwrap();
        assert!((ab.value - ba.value).abs() < 1e-8);
        assert!(ab.value > 0.0);
    }
}

/// Two disjoint 5,000-draw halves of one 64-d Gaussian source stay under a
/// bound calibrated from 20 independent repetitions of the same draw.
#[test]
fn same_source_fid_within_monte_carlo_noise() {
    let d = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mix = random_matrix(d, &mut rng);
    let calib: Vec<f64> = (0..20)
        .map(|_| {
            let a = gaussian_features(5000, d, &mix, 0.0, &mut rng);
            let b = gaussian_features(5000, d, &mix, 0.0, &mut rng);
            fid_from_features(&a, &b).unwrap()
        })
        .collect();
    let mean = calib.iter().sum::<f64>() / 20.0;
    let sd = (calib.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    let bound = mean + 4.0 * sd;
    let mut test_rng = ChaCha8Rng::seed_from_u64(77);
    let a = gaussian_features(5000, d, &mix, 0.0, &mut test_rng);
    let b = gaussian_features(5000, d, &mix, 0.0, &mut test_rng);
    let fid = fid_from_features(&a, &b).unwrap();
    assert!(fid < bound, "fid {fid} bound {bound}");
    // A real shift sits far above the noise floor.
    let shifted = gaussian_features(5000, d, &mix, 0.5, &mut test_rng);
    assert!(fid_from_features(&a, &shifted).unwrap() > 10.0 * bound);
}

#[test]
fn slerp_examples_and_norm_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut e1 = vec![0.0; 512];
    let mut e2 = vec![0.0; 512];
    e1[0] = 1.0;
    e2[1] = 1.0;
    let (u, v) = (Tensor::new(&[512], e1), Tensor::new(&[512], e2));
    let mid = slerp(&u, &v, 0.5).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((mid.data()[0] - h).abs() < 1e-12 && (mid.data()[1] - h).abs() < 1e-12);
    for _ in 0..100 {
        let mut unit = || {
            let t = Tensor::from_fn(&[512], |_| rng.sample(StandardNormal));
            let n = t.norm();
            t.map(|x| x / n)
        };
        let (a, b) = (unit(), unit());
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(slerp(&a, &b, 1.0).unwrap(), b);
        for k in 0..=10 {
            let s = slerp(&a, &b, k as f64 / 10.0).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn observer_export_counts_key_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let real = Tensor::from_fn(&[150, 32, 64, 64], |_| rng.random_range(-1.0..0.0));
    let fake = Tensor::from_fn(&[150, 32, 64, 64], |_| rng.random_range(0.0..1.0));
    let run = |dir: &std::path::Path| {
        export_observer_study(&real, &fake, &mut ChaCha8Rng::seed_from_u64(42), dir).unwrap()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = run(d1.path());
    let m2 = run(d2.path());
    assert_eq!(m1, m2);
    assert_eq!(m1.files.len(), 200);
    let pngs = std::fs::read_dir(d1.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 200);
    let key = read_observer_key(&d1.path().join(&m1.key_file)).unwrap();
    assert_eq!(key.iter().filter(|(_, l)| l == "real").count(), 100);
    assert_eq!(key.iter().filter(|(_, l)| l == "fake").count(), 100);
    // Real slices are all dark and fake all bright, so the pixels decode the key.
    for (file, label) in &key {
        let img = image::open(d1.path().join(file)).unwrap().to_luma8();
        let bright = img.pixels().all(|p| p.0[0] >= 128);
        assert_eq!(bright, label == "fake", "{file}");
    }
    for f in &m1.order_files {
        assert_eq!(
            std::fs::read_to_string(d1.path().join(f)).unwrap(),
            std::fs::read_to_string(d2.path().join(f)).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frechet_is_symmetric(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_features(40, d, &random_matrix(d, &mut rng), 0.3, &mut rng);
        let b = gaussian_features(40, d, &random_matrix(d, &mut rng), -0.2, &mut rng);
        let (sa, sb) = (gaussian_stats(&a).unwrap(), gaussian_stats(&b).unwrap());
        let ab = frechet_distance(&sa, &sb).unwrap();
        let ba = frechet_distance(&sb, &sa).unwrap();
        prop_assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn frechet_is_rotation_invariant(seed in any::<u64>(), d in 2usize..=32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_features(80, d, &random_matrix(d, &mut rng), 0.0, &mut rng);
        let b = gaussian_features(80, d, &random_matrix(d, &mut rng), 0.4, &mut rng);
        let q = rotation(d, &mut rng);
        let plain = fid_from_features(&a, &b).unwrap();
        let rotated = fid_from_features(&rotate(&a, &q), &rotate(&b, &q)).unwrap();
        prop_assert!((plain - rotated).abs() < 1e-6, "{} vs {}", plain, rotated);
    }
}
