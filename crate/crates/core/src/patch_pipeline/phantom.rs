//! Synthetic CT scans: an ellipsoidal lung of low-density parenchyma with a
//! branching tree of dense tubular vessels and, optionally, one spherical
//! nodule. Used for smoke training and tests in place of real data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CtVolume, NoduleAnnotation};

#[derive(Clone, Debug)]
pub struct PhantomConfig {
    /// (z, y, x) voxels.
    pub dims: [usize; 3],
    /// Number of vessel segments.
    pub vessel_segments: usize,
    pub with_nodule: bool,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [64, 96, 96],
            vessel_segments: 24,
            with_nodule: true,
        }
    }
}

const TISSUE_HU: f64 = 40.0;
const PARENCHYMA_HU: f64 = -850.0;
const VESSEL_HU: f64 = 60.0;
const NODULE_HU: f64 = 30.0;

/// Distance from `p` to the segment `a`–`b`.
pub fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab.iter().map(|v| v * v).sum::<f64>();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Voxels within `radius` of the segment `a`–`b` (a capsule).
pub fn capsule_mask(dims: [usize; 3], a: [f64; 3], b: [f64; 3], radius: f64) -> Vec<bool> {
    let mut mask = vec![false; dims.iter().product()];
    paint_capsule(dims, a, b, radius, |i| mask[i] = true);
    mask
}

fn paint_capsule(dims: [usize; 3], a: [f64; 3], b: [f64; 3], radius: f64, mut f: impl FnMut(usize)) {
    let lo: Vec<usize> = (0..3)
        .map(|k| (a[k].min(b[k]) - radius).floor().max(0.0) as usize)
        .collect();
    let hi: Vec<usize> = (0..3)
        .map(|k| ((a[k].max(b[k]) + radius).ceil().max(0.0) as usize).min(dims[k].saturating_sub(1)))
        .collect();
    for z in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for x in lo[2]..=hi[2] {
                if segment_distance([z as f64, y as f64, x as f64], a, b) <= radius {
                    f((z * dims[1] + y) * dims[2] + x);
                }
            }
        }
    }
}

fn lung_contains(dims: [usize; 3], p: [f64; 3]) -> bool {
    let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let r = [dims[0] as f64 * 0.46, dims[1] as f64 * 0.44, dims[2] as f64 * 0.44];
    (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum::<f64>() <= 1.0
}

fn random_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: [f64; 3] = [n.sample(rng), n.sample(rng), n.sample(rng)];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 1e-6 {
            return v.map(|c| c / len);
        }
    }
}

/// A phantom scan plus the annotation of its nodule (if any), scored benign.
pub fn phantom_scan(scan_id: &str, seed: u64, cfg: &PhantomConfig) -> (CtVolume, Vec<NoduleAnnotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = cfg.dims;
    let n = dims.iter().product::<usize>();
    let noise = Normal::new(0.0, 20.0).expect("noise sd");
    let mut lung = vec![false; n];
    let mut voxels = vec![TISSUE_HU as f32; n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let i = (z * dims[1] + y) * dims[2] + x;
                if lung_contains(dims, [z as f64, y as f64, x as f64]) {
                    lung[i] = true;
                    voxels[i] = (PARENCHYMA_HU + noise.sample(&mut rng)) as f32;
                }
            }
        }
    }

    // Grow a vessel tree from random roots; each segment may seed children
    // at its far end.
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let mut frontier: Vec<([f64; 3], f64)> = Vec::new();
    let mut drawn = 0;
    while drawn < cfg.vessel_segments {
        let (start, radius) = frontier.pop().unwrap_or_else(|| {
            let off = random_direction(&mut rng);
            let scale = rng.random_range(0.0..0.5);
            let p = [
                centre[0] + off[0] * scale * dims[0] as f64 * 0.4,
                centre[1] + off[1] * scale * dims[1] as f64 * 0.4,
                centre[2] + off[2] * scale * dims[2] as f64 * 0.4,
            ];
            (p, rng.random_range(1.5..2.8))
        });
        let dir = random_direction(&mut rng);
        let len = rng.random_range(10.0..28.0);
        let end = [start[0] + dir[0] * len, start[1] + dir[1] * len, start[2] + dir[2] * len];
        paint_capsule(dims, start, end, radius, |i| {
            if lung[i] {
                voxels[i] = (VESSEL_HU + noise.sample(&mut rng)) as f32;
            }
        });
        drawn += 1;
        if lung_contains(dims, end) && radius > 1.0 {
            let children = rng.random_range(1..=2);
            for _ in 0..children {
                frontier.push((end, radius * 0.75));
            }
        }
    }

    let mut nodule_mask = vec![false; n];
    let mut annotations = Vec::new();
    if cfg.with_nodule {
        // Deep in the lung, so the upper half of the scan has nodule-free
        // patch positions.
        let c = [
            rng.random_range(3 * dims[0] / 4..(3 * dims[0] / 4 + 6).min(dims[0])) as f64,
            rng.random_range(dims[1] / 4..3 * dims[1] / 4) as f64,
            rng.random_range(dims[2] / 4..3 * dims[2] / 4) as f64,
        ];
        let r = rng.random_range(2.5..4.5);
        let mut cells = Vec::new();
        paint_capsule(dims, c, c, r, |i| {
            nodule_mask[i] = true;
            voxels[i] = (NODULE_HU + noise.sample(&mut rng)) as f32;
            cells.push(i);
        });
        annotations.push(NoduleAnnotation {
            nodule_id: format!("{scan_id}-n0"),
            voxels: cells
                .iter()
                .map(|&i| [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]])
                .collect(),
            malignancy_scores: vec![2, 2, 3, 1],
        });
    }
    let volume = CtVolume::new(scan_id, dims, [1.0; 3], voxels, lung, nodule_mask)
        .expect("phantom arrays match their dimensions");
    (volume, annotations)
}

/// `count` phantom scans named `phantom-000`, `phantom-001`, ….
pub fn phantom_dataset(count: usize, seed: u64, cfg: &PhantomConfig) -> Vec<CtVolume> {
    (0..count)
        .map(|i| phantom_scan(&format!("phantom-{i:03}"), seed.wrapping_add(i as u64 * 7919), cfg).0)
        .collect()
}
