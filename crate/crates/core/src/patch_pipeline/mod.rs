//! CT ingestion and patch sampling: load volumes and masks, drop scans with
//! malignant nodules, and draw nodule-free lung patches windowed to
//! [−1000, 400] HU and scaled to [−1, 1].

pub mod io;
pub mod phantom;

use std::path::Path;

use lunggan_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::generators::PATCH_SHAPE;

pub const HU_MIN: f64 = -1000.0;
pub const HU_MAX: f64 = 400.0;
pub const MINIBATCHES_PER_SCAN: usize = 14;
/// Attempts allowed per requested patch before sampling gives up.
pub const RETRY_FACTOR: usize = 100;
/// Median reader score at or above which a nodule counts as malignant.
pub const MALIGNANT_MEDIAN: f64 = 4.0;

/// One CT scan with aligned lung and nodule masks, stored (z, y, x).
#[derive(Clone, Debug)]
pub struct CtVolume {
    pub scan_id: String,
    pub dims: [usize; 3],
    /// mm per voxel along (z, y, x).
    pub spacing: [f64; 3],
    pub voxels: Vec<f32>,
    pub lung_mask: Vec<bool>,
    pub nodule_mask: Vec<bool>,
}

impl CtVolume {
    pub fn new(
        scan_id: impl Into<String>,
        dims: [usize; 3],
        spacing: [f64; 3],
        voxels: Vec<f32>,
        lung_mask: Vec<bool>,
        nodule_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        for (name, len) in [
            ("voxels", voxels.len()),
            ("lung mask", lung_mask.len()),
            ("nodule mask", nodule_mask.len()),
        ] {
            if len != n {
                return Err(Error::Integrity(format!(
                    "{name} has {len} values, volume {dims:?} needs {n}"
                )));
            }
        }
        Ok(Self {
            scan_id: scan_id.into(),
            dims,
            spacing,
            voxels,
            lung_mask,
            nodule_mask,
        })
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    /// Writes `<dir>/<scan_id>.mhd` plus `_lung.rle` and `_nodule.rle` masks.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let image = io::MetaImage {
            dims: self.dims,
            spacing: self.spacing,
            element_type: io::ElementType::Short,
            data: self.voxels.iter().map(|&v| v.round() as f64).collect(),
        };
        io::write_metaimage(&dir.join(format!("{}.mhd", self.scan_id)), &image)?;
        io::write_rle_mask(&dir.join(format!("{}_lung.rle", self.scan_id)), self.dims, &self.lung_mask)?;
        io::write_rle_mask(
            &dir.join(format!("{}_nodule.rle", self.scan_id)),
            self.dims,
            &self.nodule_mask,
        )
    }
}

/// Loads `<stem>.mhd` with its lung mask (`<stem>_lung.mhd|.rle`, required)
/// and nodule mask (`<stem>_nodule.mhd|.rle`, empty when absent).
pub fn load_ct_volume(path: &Path) -> Result<CtVolume> {
    let image = io::read_metaimage(path)?;
    let scan_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Load(format!("cannot derive a scan id from {}", path.display())))?
        .to_string();
    let lung_path = io::companion(path, "_lung").ok_or_else(|| {
        Error::Load(format!("lung mask for {} not found (_lung.mhd or _lung.rle)", path.display()))
    })?;
    let (lung_dims, lung_mask) = io::read_mask(&lung_path)?;
    let nodule = match io::companion(path, "_nodule") {
        Some(p) => Some(io::read_mask(&p)?),
        None => None,
    };
    for (name, dims) in [("lung", Some(lung_dims)), ("nodule", nodule.as_ref().map(|n| n.0))] {
        if let Some(d) = dims {
            if d != image.dims {
                return Err(Error::Integrity(format!(
                    "{name} mask shape {d:?} differs from image shape {:?}",
                    image.dims
                )));
            }
        }
    }
    let n = image.data.len();
    let nodule_mask = nodule.map(|n| n.1).unwrap_or_else(|| vec![false; n]);
    CtVolume::new(
        scan_id,
        image.dims,
        image.spacing,
        image.data.iter().map(|&v| v as f32).collect(),
        lung_mask,
        nodule_mask,
    )
}

/// A nodule outlined by the readers, with one malignancy score per reader.
#[derive(Clone, Debug, PartialEq)]
pub struct NoduleAnnotation {
    pub nodule_id: String,
    pub voxels: Vec<[usize; 3]>,
    pub malignancy_scores: Vec<u8>,
}

impl NoduleAnnotation {
    pub fn median_score(&self) -> Result<f64> {
        if self.malignancy_scores.is_empty() {
            return Err(Error::Validation(format!("nodule {} has no scores", self.nodule_id)));
        }
        if let Some(s) = self.malignancy_scores.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::Validation(format!(
                "nodule {} has score {s} outside 1..=5",
                self.nodule_id
            )));
        }
        let mut s = self.malignancy_scores.clone();
        s.sort_unstable();
        let n = s.len();
        Ok(if n % 2 == 1 {
            s[n / 2] as f64
        } else {
            (s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0
        })
    }
}

/// Scan ids with no nodule whose median score is at least 4, in input order.
pub fn filter_malignant_scans(scans: &[(String, Vec<NoduleAnnotation>)]) -> Result<Vec<String>> {
    let mut kept = Vec::new();
    for (id, nodules) in scans {
        let mut malignant = false;
        for n in nodules {
            malignant |= n.median_score()? >= MALIGNANT_MEDIAN;
        }
        if !malignant {
            kept.push(id.clone());
        }
    }
    Ok(kept)
}

/// Clamps to [−1000, 400] HU and maps linearly onto [−1, 1].
pub fn window_and_scale(hu: f64) -> f64 {
    let c = hu.clamp(HU_MIN, HU_MAX);
    if c == HU_MAX {
        return 1.0;
    }
    (c - HU_MIN) / (HU_MAX - HU_MIN) * 2.0 - 1.0
}

/// Patches with their centres (z, y, x) in the source volume.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    /// `[n, 32, 64, 64]`.
    pub patches: Tensor,
    pub centers: Vec<[usize; 3]>,
}

const HALF: [usize; 3] = [PATCH_SHAPE[0] / 2, PATCH_SHAPE[1] / 2, PATCH_SHAPE[2] / 2];

/// Precomputed candidate centres and nodule counts for one volume.
pub struct PatchSampler<'v> {
    volume: &'v CtVolume,
    centers: Vec<u32>,
    /// Summed-volume table of the nodule mask, (d+1)×(h+1)×(w+1).
    nodule_sum: Vec<u32>,
}

impl<'v> PatchSampler<'v> {
    /// Candidate centres lie in the lung mask with the whole patch inside
    /// the volume.
    pub fn new(volume: &'v CtVolume) -> Result<Self> {
        let [d, h, w] = volume.dims;
        let mut centers = Vec::new();
        if d >= PATCH_SHAPE[0] && h >= PATCH_SHAPE[1] && w >= PATCH_SHAPE[2] {
            for z in HALF[0]..=d - (PATCH_SHAPE[0] - HALF[0]) {
                for y in HALF[1]..=h - (PATCH_SHAPE[1] - HALF[1]) {
                    for x in HALF[2]..=w - (PATCH_SHAPE[2] - HALF[2]) {
                        let i = volume.index(z, y, x);
                        if volume.lung_mask[i] {
                            centers.push(i as u32);
                        }
                    }
                }
            }
        }
        if centers.is_empty() {
            return Err(Error::Sampling(format!(
                "scan {} has no lung voxel that can centre a {:?} patch",
                volume.scan_id, PATCH_SHAPE
            )));
        }
        let (sd, sh, sw) = (d + 1, h + 1, w + 1);
        let mut sum = vec![0u32; sd * sh * sw];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let v = u32::from(volume.nodule_mask[volume.index(z, y, x)]);
                    let at = |a: usize, b: usize, c: usize| (a * sh + b) * sw + c;
                    sum[at(z + 1, y + 1, x + 1)] = v
                        .wrapping_add(sum[at(z, y + 1, x + 1)])
                        .wrapping_add(sum[at(z + 1, y, x + 1)])
                        .wrapping_add(sum[at(z + 1, y + 1, x)])
                        .wrapping_sub(sum[at(z, y, x + 1)])
                        .wrapping_sub(sum[at(z, y + 1, x)])
                        .wrapping_sub(sum[at(z + 1, y, x)])
                        .wrapping_add(sum[at(z, y, x)]);
                }
            }
        }
        Ok(Self {
            volume,
            centers,
            nodule_sum: sum,
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.centers.len()
    }

    fn coords(&self, index: u32) -> [usize; 3] {
        let [_, h, w] = self.volume.dims;
        let i = index as usize;
        [i / (h * w), (i / w) % h, i % w]
    }

    /// Nodule voxels inside the patch centred at `c`.
    pub fn nodule_voxels(&self, c: [usize; 3]) -> u32 {
        let [_, h, w] = self.volume.dims;
        let (sh, sw) = (h + 1, w + 1);
        let at = |a: usize, b: usize, c: usize| self.nodule_sum[(a * sh + b) * sw + c];
        let lo = [c[0] - HALF[0], c[1] - HALF[1], c[2] - HALF[2]];
        let hi = [lo[0] + PATCH_SHAPE[0], lo[1] + PATCH_SHAPE[1], lo[2] + PATCH_SHAPE[2]];
        at(hi[0], hi[1], hi[2])
            .wrapping_sub(at(lo[0], hi[1], hi[2]))
            .wrapping_sub(at(hi[0], lo[1], hi[2]))
            .wrapping_sub(at(hi[0], hi[1], lo[2]))
            .wrapping_add(at(lo[0], lo[1], hi[2]))
            .wrapping_add(at(lo[0], hi[1], lo[2]))
            .wrapping_add(at(hi[0], lo[1], lo[2]))
            .wrapping_sub(at(lo[0], lo[1], lo[2]))
    }

    /// Windowed, scaled patch centred at `c`, written into `out`.
    pub fn extract(&self, c: [usize; 3], out: &mut [f64]) {
        let v = self.volume;
        let lo = [c[0] - HALF[0], c[1] - HALF[1], c[2] - HALF[2]];
        let mut k = 0;
        for z in 0..PATCH_SHAPE[0] {
            for y in 0..PATCH_SHAPE[1] {
                let row = v.index(lo[0] + z, lo[1] + y, lo[2]);
                for x in 0..PATCH_SHAPE[2] {
                    out[k] = window_and_scale(v.voxels[row + x] as f64);
                    k += 1;
                }
            }
        }
    }

    /// Rejection-samples `count` centres whose patch avoids every nodule
    /// voxel, within `RETRY_FACTOR × count` attempts.
    pub fn sample_centers<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<[usize; 3]>> {
        let budget = RETRY_FACTOR * count.max(1);
        let mut accepted = Vec::with_capacity(count);
        let mut attempts = 0;
        while accepted.len() < count {
            if attempts == budget {
                return Err(Error::PartialYield {
                    accepted: accepted.len(),
                    requested: count,
                });
            }
            attempts += 1;
            let c = self.coords(self.centers[rng.random_range(0..self.centers.len())]);
            if self.nodule_voxels(c) == 0 {
                accepted.push(c);
            }
        }
        Ok(accepted)
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<PatchBatch> {
        let centers = self.sample_centers(count, rng)?;
        let per = PATCH_SHAPE.iter().product::<usize>();
        let mut data = vec![0.0; count * per];
        for (c, out) in centers.iter().zip(data.chunks_mut(per)) {
            self.extract(*c, out);
        }
        Ok(PatchBatch {
            patches: Tensor::new(&[count, PATCH_SHAPE[0], PATCH_SHAPE[1], PATCH_SHAPE[2]], data),
            centers,
        })
    }
}

pub fn sample_patch_batch<R: Rng + ?Sized>(volume: &CtVolume, count: usize, rng: &mut R) -> Result<PatchBatch> {
    PatchSampler::new(volume)?.sample(count, rng)
}

/// One epoch's schedule: scans in random order, each visited for
/// `minibatches_per_scan` consecutive iterations.
pub fn epoch_plan<R: Rng + ?Sized>(
    scan_ids: &[String],
    minibatches_per_scan: usize,
    rng: &mut R,
) -> Vec<(String, usize)> {
    let mut order: Vec<&String> = scan_ids.iter().collect();
    order.shuffle(rng);
    order
        .into_iter()
        .flat_map(|id| (0..minibatches_per_scan).map(move |m| (id.clone(), m)))
        .collect()
}

pub fn iterations_per_epoch(scans: usize) -> usize {
    scans * MINIBATCHES_PER_SCAN
}
