//! Vessel-structure statistics of patches: binarise, thin to a curve
//! skeleton, count branch points, compare real and generated branch-count
//! distributions by ROC, and render rotating projections.

pub mod mip;
pub mod report;
pub mod roc;

use std::sync::OnceLock;

use lunggan_tensor::Tensor;

use crate::error::{Error, Result};

pub use mip::{render_mip, MipImage};
pub use roc::{auc_mann_whitney, branch_count_roc, RocCurve};

/// Scaled-intensity threshold separating vessels from parenchyma
/// (≈ −300 HU).
pub const DEFAULT_THRESHOLD: f64 = 0.0;

/// A boolean volume in (z, y, x) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelMask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl VoxelMask {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims.iter().product()],
        }
    }

    pub fn from_coords(dims: [usize; 3], coords: &[[usize; 3]]) -> Self {
        let mut m = Self::empty(dims);
        for &c in coords {
            let i = m.index(c);
            m.data[i] = true;
        }
        m
    }

    pub fn index(&self, [z, y, x]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [_, h, w] = self.dims;
        [i / (h * w), (i / w) % h, i % w]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_subset_of(&self, other: &VoxelMask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn get(&self, z: isize, y: isize, x: isize) -> bool {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return false;
        }
        self.data[(z as usize * h + y as usize) * w + x as usize]
    }

    /// The 3×3×3 neighbourhood of `c` as a 27-bit mask (bit 13 is `c`).
    fn neighbourhood(&self, c: [usize; 3]) -> u32 {
        let (z, y, x) = (c[0] as isize, c[1] as isize, c[2] as isize);
        let mut bits = 0;
        for (k, (dz, dy, dx)) in offsets().enumerate() {
            if self.get(z + dz, y + dy, x + dx) {
                bits |= 1 << k;
            }
        }
        bits
    }

    /// Foreground 26-neighbours of voxel `i`.
    pub fn neighbour_count(&self, i: usize) -> u32 {
        (self.neighbourhood(self.coords(i)) & !CENTRE_BIT).count_ones()
    }
}

/// Thinned vessel skeleton and the threshold it was extracted at.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub mask: VoxelMask,
    pub threshold: f64,
}

const CENTRE_BIT: u32 = 1 << 13;

fn offsets() -> impl Iterator<Item = (isize, isize, isize)> {
    (0..27).map(|k| (k / 9 - 1, (k / 3) % 3 - 1, k % 3 - 1))
}

struct Tables {
    adj26: [u32; 27],
    adj6: [u32; 27],
    n18: u32,
    n6: u32,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let off: Vec<_> = offsets().collect();
        let mut adj26 = [0u32; 27];
        let mut adj6 = [0u32; 27];
        let (mut n18, mut n6) = (0, 0);
        for (i, a) in off.iter().enumerate() {
            let l1 = a.0.abs() + a.1.abs() + a.2.abs();
            if l1 == 1 {
                n6 |= 1 << i;
            }
            if (1..=2).contains(&l1) {
                n18 |= 1 << i;
            }
            for (j, b) in off.iter().enumerate() {
                let d = [(a.0 - b.0).abs(), (a.1 - b.1).abs(), (a.2 - b.2).abs()];
                if i != j && d.iter().all(|&v| v <= 1) {
                    adj26[i] |= 1 << j;
                    if d.iter().sum::<isize>() == 1 {
                        adj6[i] |= 1 << j;
                    }
                }
            }
        }
        Tables { adj26, adj6, n18, n6 }
    })
}

/// Connected components of `set` under `adj`; yields each as a bit mask.
fn components(set: u32, adj: &[u32; 27]) -> Vec<u32> {
    let mut rest = set;
    let mut out = Vec::new();
    while rest != 0 {
        let mut comp = rest & rest.wrapping_neg();
        loop {
            let mut grown = comp;
            let mut bits = comp;
            while bits != 0 {
                let k = bits.trailing_zeros();
                grown |= adj[k as usize] & set;
                bits &= bits - 1;
            }
            if grown == comp {
                break;
            }
            comp = grown;
        }
        rest &= !comp;
        out.push(comp);
    }
    out
}

/// Whether deleting the centre of a 26/6 neighbourhood preserves topology:
/// the remaining foreground neighbours form one 26-component and the
/// 18-neighbourhood background has exactly one 6-component touching the
/// centre's face neighbours.
pub fn is_simple(neighbourhood: u32) -> bool {
    let t = tables();
    let fg = neighbourhood & !CENTRE_BIT & ((1 << 27) - 1);
    if components(fg, &t.adj26).len() != 1 {
        return false;
    }
    let bg = !neighbourhood & t.n18;
    components(bg, &t.adj6).into_iter().filter(|c| c & t.n6 != 0).count() == 1
}

/// `intensity > threshold`, voxelwise, for a `[D, H, W]` patch.
pub fn binarize(patch: &Tensor, threshold: f64) -> Result<VoxelMask> {
    let s = patch.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("binarize expects [D, H, W], got {s:?}")));
    }
    Ok(VoxelMask {
        dims: [s[0], s[1], s[2]],
        data: patch.data().iter().map(|&v| v > threshold).collect(),
    })
}

const DIRECTIONS: [(isize, isize, isize); 6] = [
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, -1),
    (-1, 0, 0),
    (1, 0, 0),
];

/// Curve skeleton by directional thinning: six border directions per pass,
/// removing simple non-endpoint voxels until nothing changes. Candidates of
/// a subiteration are re-tested one at a time before deletion, so the
/// result has the input's topology.
pub fn skeletonize(mask: &VoxelMask) -> VoxelMask {
    let mut m = mask.clone();
    let removable = |m: &VoxelMask, i: usize| {
        let n = m.neighbourhood(m.coords(i));
        let fg = (n & !CENTRE_BIT).count_ones();
        fg > 1 && is_simple(n)
    };
    loop {
        let mut changed = false;
        for &(dz, dy, dx) in &DIRECTIONS {
            let candidates: Vec<usize> = (0..m.data.len())
                .filter(|&i| {
                    if !m.data[i] {
                        return false;
                    }
                    let [z, y, x] = m.coords(i);
                    !m.get(z as isize + dz, y as isize + dy, x as isize + dx) && removable(&m, i)
                })
                .collect();
            for i in candidates {
                if removable(&m, i) {
                    m.data[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

/// Thresholds and thins a `[D, H, W]` patch.
pub fn skeleton_of(patch: &Tensor, threshold: f64) -> Result<Skeleton> {
    Ok(Skeleton {
        mask: skeletonize(&binarize(patch, threshold)?),
        threshold,
    })
}

/// Number of 26-connected foreground components.
pub fn count_components(mask: &VoxelMask) -> usize {
    label_components(mask, |_| true).len()
}

/// 26-connected components of the voxels of `mask` accepted by `keep`.
fn label_components(mask: &VoxelMask, keep: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.data.len()];
    let mut out = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || seen[start] || !keep(start) {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            let [z, y, x] = mask.coords(comp[k]);
            k += 1;
            for (dz, dy, dx) in offsets() {
                let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                if !mask.get(nz, ny, nx) {
                    continue;
                }
                let j = mask.index([nz as usize, ny as usize, nx as usize]);
                if !seen[j] && keep(j) {
                    seen[j] = true;
                    comp.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Branch points of a skeleton with their (z, y, x) coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchPoints {
    pub count: usize,
    pub coords: Vec<[usize; 3]>,
}

/// Voxels with three or more skeleton neighbours are junction voxels; each
/// 26-connected cluster of them is one branch point, located at the
/// cluster's medoid. Without the clustering the
/// voxels flanking a crossing would count as extra branch points.
pub fn count_branch_points(skel: &VoxelMask) -> BranchPoints {
    let degree: Vec<u32> = (0..skel.data.len())
        .map(|i| if skel.data[i] { skel.neighbour_count(i) } else { 0 })
        .collect();
    let clusters = label_components(skel, |i| degree[i] >= 3);
    let mut coords: Vec<[usize; 3]> = clusters
        .iter()
        .map(|c| {
            // Medoid under squared distance; lowest index on ties.
            let pts: Vec<[usize; 3]> = c.iter().map(|&i| skel.coords(i)).collect();
            let cost = |p: &[usize; 3]| -> usize {
                pts.iter()
                    .map(|q| (0..3).map(|k| p[k].abs_diff(q[k]).pow(2)).sum::<usize>())
                    .sum()
            };
            *pts.iter()
                .min_by(|a, b| cost(a).cmp(&cost(b)).then(a.cmp(b)))
                .expect("clusters are non-empty")
        })
        .collect();
    coords.sort();
    BranchPoints {
        count: coords.len(),
        coords,
    }
}
