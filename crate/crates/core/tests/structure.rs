use lunggan_core::patch_pipeline::phantom::capsule_mask;
use lunggan_core::structure_analysis::{
    auc_mann_whitney, branch_count_roc, count_branch_points, count_components, skeletonize, VoxelMask,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [usize; 3] = [32, 64, 64];

#[test]
fn tube_thins_to_its_axis() {
    let (a, b) = ([16.0, 32.0, 10.0], [16.0, 32.0, 50.0]);
    let tube = VoxelMask {
        dims: DIMS,
        data: capsule_mask(DIMS, a, b, 3.0),
    };
    let skel = skeletonize(&tube);
    assert!(skel.is_subset_of(&tube));
    assert_eq!(count_components(&skel), 1);
    let len = skel.count() as f64;
    let axis = b[2] - a[2] + 1.0;
    assert!((len - axis).abs() <= 2.0, "skeleton {len} voxels, axis {axis}");
    assert_eq!(count_branch_points(&skel).count, 0);
}

#[test]
fn y_junction_has_one_branch_point() {
    let mut data = capsule_mask(DIMS, [16.0, 32.0, 8.0], [16.0, 32.0, 32.0], 2.0);
    for (i, v) in capsule_mask(DIMS, [16.0, 32.0, 32.0], [16.0, 10.0, 54.0], 2.0).into_iter().enumerate() {
        data[i] |= v;
    }
    for (i, v) in capsule_mask(DIMS, [16.0, 32.0, 32.0], [16.0, 54.0, 54.0], 2.0).into_iter().enumerate() {
        data[i] |= v;
    }
    let skel = skeletonize(&VoxelMask { dims: DIMS, data });
    assert_eq!(count_components(&skel), 1);
    assert_eq!(count_branch_points(&skel).count, 1);
}

fn random_blobs(seed: u64) -> VoxelMask {
    let dims = [12, 16, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![false; dims.iter().product()];
    for _ in 0..rng.random_range(1..5) {
        let a = [rng.random_range(2.0..10.0), rng.random_range(2.0..14.0), rng.random_range(2.0..14.0)];
        let b = [rng.random_range(2.0..10.0), rng.random_range(2.0..14.0), rng.random_range(2.0..14.0)];
        for (i, v) in capsule_mask(dims, a, b, rng.random_range(0.8..2.5)).into_iter().enumerate() {
            data[i] |= v;
        }
    }
    VoxelMask { dims, data }
}

/// Applies an axis permutation and per-axis reflections to a cubic mask.
fn transform(m: &VoxelMask, perm: [usize; 3], flip: [bool; 3]) -> VoxelMask {
    let n = m.dims[0];
    let mut out = VoxelMask::empty(m.dims);
    for i in 0..m.data.len() {
        if m.data[i] {
            let c = m.coords(i);
            let mut t = [c[perm[0]], c[perm[1]], c[perm[2]]];
            for k in 0..3 {
                if flip[k] {
                    t[k] = n - 1 - t[k];
                }
            }
            let j = out.index(t);
            out.data[j] = true;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn thinning_keeps_topology_and_stays_inside(seed in any::<u64>()) {
        let m = random_blobs(seed);
        let s = skeletonize(&m);
        prop_assert!(s.is_subset_of(&m));
        prop_assert_eq!(count_components(&s), count_components(&m));
    }

    #[test]
    fn branch_count_is_symmetric(seed in any::<u64>(), p in 0usize..6, flips in any::<[bool; 3]>()) {
        let cube = {
            let m = random_blobs(seed);
            let dims = [16, 16, 16];
            let mut c = VoxelMask::empty(dims);
            for i in 0..m.data.len() {
                if m.data[i] {
                    let j = c.index(m.coords(i));
                    c.data[j] = true;
                }
            }
            skeletonize(&c)
        };
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let t = transform(&cube, perms[p], flips);
        prop_assert_eq!(count_branch_points(&t).count, count_branch_points(&cube).count);
    }

    #[test]
    fn auc_is_bounded_and_antisymmetric(
        real in prop::collection::vec(0u32..30, 1..60),
        fake in prop::collection::vec(0u32..30, 1..60),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = branch_count_roc(&real, &fake, 0, &mut rng).unwrap().auc;
        let b = branch_count_roc(&fake, &real, 0, &mut rng).unwrap().auc;
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

/// Direct O(n·m) pair count, independent of the sorted implementation.
fn pair_count_auc(real: &[u32], fake: &[u32]) -> f64 {
    let mut s = 0.0;
    for &r in real {
        for &f in fake {
            s += if r > f { 1.0 } else if r == f { 0.5 } else { 0.0 };
        }
    }
    s / (real.len() * fake.len()) as f64
}

#[test]
fn trapezoid_auc_matches_rank_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let real: Vec<u32> = (0..200).map(|_| rng.random_range(0..40)).collect();
        let fake: Vec<u32> = (0..200).map(|_| rng.random_range(5..35)).collect();
        let roc = branch_count_roc(&real, &fake, 0, &mut rng).unwrap();
        let oracle = pair_count_auc(&real, &fake);
        assert!((roc.auc - oracle).abs() < 1e-9);
        assert!((auc_mann_whitney(&real, &fake) - oracle).abs() < 1e-9);
    }
}

#[test]
fn identical_multisets_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let counts: Vec<u32> = (0..500).map(|_| rng.random_range(0..80)).collect();
    let roc = branch_count_roc(&counts, &counts, 500, &mut rng).unwrap();
    assert!((roc.auc - 0.5).abs() <= 0.02);
}

#[test]
fn interval_narrows_with_more_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let widths: Vec<f64> = [50, 200, 800]
        .iter()
        .map(|&n| {
            let real: Vec<u32> = (0..n).map(|_| rng.random_range(10..50)).collect();
            let fake: Vec<u32> = (0..n).map(|_| rng.random_range(0..45)).collect();
            let roc = branch_count_roc(&real, &fake, 1000, &mut rng).unwrap();
            assert!(roc.auc_ci.0 <= roc.auc && roc.auc <= roc.auc_ci.1);
            roc.auc_ci.1 - roc.auc_ci.0
        })
        .collect();
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
}
