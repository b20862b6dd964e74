//! 2D embeddings of generator latent spaces, optionally labelled with the
//! branch count of each latent's generated patch. The reduction method is
//! pluggable; a PCA fallback ships for tests and offline use.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use lunggan_tensor::{parallel, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::features_io::write_feature_matrix;
use crate::generators::{Family, Generator};
use crate::minibatch_tools::sample_latents;
use crate::structure_analysis::{count_branch_points, skeleton_of};

pub const DEFAULT_EMBED_SAMPLES: usize = 50_000;
pub const DEFAULT_LABELLED: usize = 1000;
/// Branch count at which the scatter colour scale saturates.
pub const COLOUR_SATURATION: u32 = 120;
const GENERATION_BATCH: usize = 8;

/// Fit-transform contract: `[N, d]` codes in, one 2D point per row out.
pub trait Reducer {
    fn name(&self) -> String;
    fn fit_transform(&mut self, codes: &Tensor) -> Result<Vec<[f64; 2]>>;
}

/// Projection onto the two leading principal axes, each axis signed so its
/// largest-magnitude loading is positive.
#[derive(Clone, Copy, Debug, Default)]
pub struct Pca;

impl Reducer for Pca {
    fn name(&self) -> String {
        "pca".into()
    }

    fn fit_transform(&mut self, codes: &Tensor) -> Result<Vec<[f64; 2]>> {
        let s = codes.shape();
        if s.len() != 2 || s[0] < 2 || s[1] < 2 {
            return Err(Error::Argument(format!("PCA needs [N >= 2, d >= 2] codes, got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let x = DMatrix::from_row_slice(n, d, codes.data());
        let mean = x.row_mean();
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let axes: Vec<Vec<f64>> = order[..2]
            .iter()
            .map(|&k| {
                let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
                let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                v.into_iter().map(|c| c * sign).collect()
            })
            .collect();
        Ok((0..n)
            .map(|i| {
                let row = centred.row(i);
                let p = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                [p(&axes[0]), p(&axes[1])]
            })
            .collect())
    }
}

/// Runs `program [args…] <codes.bin> <points.csv>`: codes go out as a
/// feature-matrix file; the program writes `x,y` rows (with header).
#[derive(Clone, Debug)]
pub struct ExternalReducer {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
}

impl Reducer for ExternalReducer {
    fn name(&self) -> String {
        format!("external:{}", self.program.display())
    }

    fn fit_transform(&mut self, codes: &Tensor) -> Result<Vec<[f64; 2]>> {
        fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        let input = self.work_dir.join("reducer_input.bin");
        let output = self.work_dir.join("reducer_output.csv");
        write_feature_matrix(&input, codes)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::Load(format!("reducer {} failed with {status}", self.program.display())));
        }
        let mut r = csv::Reader::from_path(&output).map_err(|e| Error::format("reducer output", e.to_string()))?;
        let points = r
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| Error::format("reducer output", e.to_string()))?;
                let num = |k: usize| -> Result<f64> {
                    rec.get(k)
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| Error::format("reducer output", format!("bad row {rec:?}")))
                };
                Ok([num(0)?, num(1)?])
            })
            .collect::<Result<Vec<_>>>()?;
        if points.len() != codes.shape()[0] {
            return Err(Error::format(
                "reducer output",
                format!("{} points for {} codes", points.len(), codes.shape()[0]),
            ));
        }
        Ok(points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub latent_id: usize,
    pub x: f64,
    pub y: f64,
    pub branch_count: Option<u32>,
}

/// Embedded points plus the `z` latents they came from (row `latent_id`).
#[derive(Clone, Debug)]
pub struct Embedding {
    pub points: Vec<EmbeddingPoint>,
    pub latents: Tensor,
    pub reducer: String,
}

/// The space the embedding is computed in: `w` for the style-based family,
/// `z` otherwise.
pub fn native_codes(gen: &Generator, z: &Tensor) -> Result<Tensor> {
    match gen.family() {
        Family::Stylegan3d => gen.map_latent(z),
        _ => Ok(z.clone()),
    }
}

/// Reduces arbitrary `[N, d]` codes, naming each point by its row.
pub fn embed_codes(codes: &Tensor, reducer: &mut dyn Reducer) -> Result<Vec<EmbeddingPoint>> {
    let coords = reducer.fit_transform(codes).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("dimensionality reduction ({}): {m}", reducer.name())),
        other => other,
    })?;
    Ok(coords
        .into_iter()
        .enumerate()
        .map(|(i, [x, y])| EmbeddingPoint {
            latent_id: i,
            x,
            y,
            branch_count: None,
        })
        .collect())
}

pub fn embed_latents<R: Rng + ?Sized>(
    gen: &Generator,
    n_embed: usize,
    reducer: &mut dyn Reducer,
    rng: &mut R,
) -> Result<Embedding> {
    if n_embed < 10 {
        return Err(Error::Argument(format!("embedding needs at least 10 samples, got {n_embed}")));
    }
    let z = sample_latents(n_embed, rng);
    let mut codes = Vec::with_capacity(z.numel());
    for start in (0..n_embed).step_by(1024) {
        let idx: Vec<usize> = (start..(start + 1024).min(n_embed)).collect();
        codes.extend_from_slice(native_codes(gen, &z.select(&idx))?.data());
    }
    let codes = Tensor::new(z.shape(), codes);
    Ok(Embedding {
        points: embed_codes(&codes, reducer)?,
        latents: z,
        reducer: reducer.name(),
    })
}

/// Generate → binarise → skeletonise → count, for each `[N, 512]` latent.
pub fn branch_counts_for_latents(gen: &Generator, z: &Tensor, threshold: f64) -> Result<Vec<u32>> {
    let n = z.batch();
    let mut counts = Vec::with_capacity(n);
    for start in (0..n).step_by(GENERATION_BATCH) {
        let idx: Vec<usize> = (start..(start + GENERATION_BATCH).min(n)).collect();
        let patches = gen.generate(&z.select(&idx))?;
        let dims = &patches.shape()[1..];
        let batch: Vec<Result<u32>> = parallel::map_indices(idx.len(), |i| {
            let p = Tensor::new(dims, patches.sample(i).to_vec());
            Ok(count_branch_points(&skeleton_of(&p, threshold)?.mask).count as u32)
        });
        for c in batch {
            counts.push(c?);
        }
    }
    Ok(counts)
}

/// Labels the points whose ids are listed (default: the first 1000).
pub fn label_with_branch_counts(
    gen: &Generator,
    embedding: &mut Embedding,
    ids: &[usize],
    threshold: f64,
) -> Result<()> {
    let n = embedding.latents.batch();
    if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
        return Err(Error::Argument(format!("no stored latent for point {bad} (have {n})")));
    }
    let counts = branch_counts_for_latents(gen, &embedding.latents.select(ids), threshold)?;
    for (&id, c) in ids.iter().zip(counts) {
        if let Some(p) = embedding.points.iter_mut().find(|p| p.latent_id == id) {
            p.branch_count = Some(c);
        }
    }
    Ok(())
}

pub fn write_embedding_csv(path: &Path, points: &[EmbeddingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("embedding csv", e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::format("embedding csv", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embedding_csv(path: &Path) -> Result<Vec<EmbeddingPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("embedding csv", e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format("embedding csv", format!("{}: {e}", path.display()))))
        .collect()
}

/// Viridis-like ramp at `t` in [0, 1].
fn ramp(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * 4.0;
    let k = (x.floor() as usize).min(3);
    let f = x - k as f64;
    let c = |j: usize| (STOPS[k][j] * (1.0 - f) + STOPS[k + 1][j] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Scatter plot: unlabelled points grey, labelled ones coloured by branch
/// count (saturating at 120) and drawn on top.
pub fn plot_embedding(path: &Path, points: &[EmbeddingPoint], size: u32) -> Result<()> {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if !points.is_empty() {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let margin = 8.0;
        let span = (size as f64 - 2.0 * margin).max(1.0);
        let place = |v: f64, lo: f64, hi: f64| margin + if hi > lo { (v - lo) / (hi - lo) * span } else { span / 2.0 };
        let mut dot = |p: &EmbeddingPoint, colour: Rgb<u8>| {
            let (cx, cy) = (place(p.x, x0, x1) as i64, size as i64 - 1 - place(p.y, y0, y1) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (cx + dx, cy + dy);
                    if x >= 0 && y >= 0 && x < size as i64 && y < size as i64 {
                        img.put_pixel(x as u32, y as u32, colour);
                    }
                }
            }
        };
        for p in points.iter().filter(|p| p.branch_count.is_none()) {
            dot(p, Rgb([200, 200, 200]));
        }
        for p in points {
            if let Some(c) = p.branch_count {
                dot(p, ramp(f64::from(c.min(COLOUR_SATURATION)) / f64::from(COLOUR_SATURATION)));
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}
