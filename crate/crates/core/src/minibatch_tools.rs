//! Within-batch similarity: pairwise L1 feature distances, the MDmin
//! statistic (distance to the nearest other sample) and the largeEBS
//! selection of the most mode-collapsed generated samples.

use std::sync::Arc;

use lunggan_tensor::{parallel, Backward, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generators::{Generator, LATENT_DIM};
use crate::nn::Mode;

/// Symmetric `B × B` matrix of L1 distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseDistances {
    n: usize,
    values: Vec<f64>,
}

impl PairwiseDistances {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

fn require_pair(b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::Argument(format!(
            "within-batch distances need at least 2 samples, got {b}"
        )));
    }
    Ok(())
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `d_ij = Σ |f_i − f_j|` over every element of each sample.
pub fn pairwise_l1(features: &Tensor) -> Result<PairwiseDistances> {
    let b = features.batch();
    require_pair(b)?;
    let rows = parallel::map_indices(b, |i| {
        (0..b)
            .map(|j| if i == j { 0.0 } else { l1(features.sample(i), features.sample(j)) })
            .collect::<Vec<f64>>()
    });
    let mut values = rows.concat();
    // Mirror the upper triangle so the matrix is exactly symmetric.
    for i in 0..b {
        for j in 0..i {
            values[i * b + j] = values[j * b + i];
        }
    }
    Ok(PairwiseDistances { n: b, values })
}

/// Nearest other sample for each row; ties go to the smallest index.
fn nearest(d: &PairwiseDistances) -> Vec<(usize, f64)> {
    (0..d.n)
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, &v) in d.row(i).iter().enumerate() {
                if j != i && v < best.1 {
                    best = (j, v);
                }
            }
            best
        })
        .collect()
}

/// `MDmin_i = min_{j≠i} d_ij`.
pub fn mdmin_scores(d: &PairwiseDistances) -> Result<Vec<f64>> {
    require_pair(d.n)?;
    Ok(nearest(d).into_iter().map(|(_, v)| v).collect())
}

struct MdminBackward {
    x: Arc<Tensor>,
    partner: Vec<usize>,
    channels: usize,
    spatial: usize,
}

impl Backward for MdminBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, c, sp) = (self.partner.len(), self.channels, self.spatial);
        let n = c * sp;
        let mut dx = Tensor::zeros(self.x.shape());
        {
            let out = dx.data_mut();
            for i in 0..b {
                let g = &grad.sample(i)[..n];
                out[i * n..(i + 1) * n].copy_from_slice(g);
            }
            for i in 0..b {
                let gm: f64 = grad.sample(i)[n..].iter().sum();
                if gm == 0.0 {
                    continue;
                }
                let j = self.partner[i];
                let (xi, xj) = (self.x.sample(i), self.x.sample(j));
                for e in 0..n {
                    let s = match xi[e].partial_cmp(&xj[e]) {
                        Some(std::cmp::Ordering::Greater) => 1.0,
                        Some(std::cmp::Ordering::Less) => -1.0,
                        _ => 0.0,
                    };
                    out[i * n + e] += gm * s;
                    out[j * n + e] -= gm * s;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Appends each sample's MDmin (over the features `x` itself) as one extra
/// constant channel: `[B, C, ...]` → `[B, C+1, ...]`.
pub fn append_mdmin(x: Var<'_>) -> Result<Var<'_>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("MDmin expects [B, C, ...], got {shape:?}")));
    }
    let (b, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let d = pairwise_l1(&xv)?;
    let near = nearest(&d);
    let n = c * spatial;
    let mut data = Vec::with_capacity(b * (n + spatial));
    for (i, &(_, m)) in near.iter().enumerate() {
        data.extend_from_slice(xv.sample(i));
        data.extend(std::iter::repeat_n(m, spatial));
    }
    let mut out_shape = shape.clone();
    out_shape[1] = c + 1;
    let partner = near.iter().map(|&(j, _)| j).collect();
    let y = Tensor::new(&out_shape, data);
    Ok(x.tape().record(y, &[x], move || {
        Box::new(MdminBackward {
            x: xv,
            partner,
            channels: c,
            spatial,
        })
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeEbsConfig {
    /// Candidate batch size N.
    pub candidates: usize,
    /// Samples kept, k.
    pub keep: usize,
    /// Epochs trained without selection.
    pub warmup_epochs: usize,
    /// Discriminator layer whose features are compared.
    pub tap_layer: usize,
}

impl LargeEbsConfig {
    /// N = 4 × batch, k = batch, five warmup epochs, features after the
    /// last hidden layer.
    pub fn for_batch(batch: usize) -> Self {
        Self {
            candidates: 4 * batch,
            keep: batch,
            warmup_epochs: 5,
            tap_layer: crate::discriminator::DEFAULT_TAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep < 2 {
            return Err(Error::config("largeebs.keep", "must be at least 2"));
        }
        if self.keep > self.candidates {
            return Err(Error::config(
                "largeebs.keep",
                format!("keep {} exceeds candidates {}", self.keep, self.candidates),
            ));
        }
        Ok(())
    }
}

/// Outcome of a selection pass.
#[derive(Clone, Debug)]
pub struct Selection {
    /// Indices into the candidate batch, most collapsed first.
    pub indices: Vec<usize>,
    /// `[k, 512]`.
    pub latents: Tensor,
    /// `[k, 32, 64, 64]`.
    pub patches: Tensor,
    /// MDmin of each kept sample within the candidate batch.
    pub mdmin: Vec<f64>,
}

/// Indices of the `k` smallest scores, ascending, ties by index.
pub fn smallest_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Selection over a given candidate batch of latents.
pub fn largeebs_select_from(
    gen: &Generator,
    disc: &Discriminator,
    latents: &Tensor,
    keep: usize,
    tap_layer: usize,
) -> Result<Selection> {
    let n = latents.batch();
    if keep > n {
        return Err(Error::Argument(format!("keep {keep} exceeds candidates {n}")));
    }
    require_pair(n)?;
    // Frozen mode: batch statistics, nothing written back, no gradients.
    let patches = gen.generate_with_mode(latents, Mode::Frozen)?;
    let features = disc.features_at_layer(&patches, tap_layer)?;
    let scores = mdmin_scores(&pairwise_l1(&features)?)?;
    let indices = smallest_k(&scores, keep);
    Ok(Selection {
        latents: latents.select(&indices),
        patches: patches.select(&indices),
        mdmin: indices.iter().map(|&i| scores[i]).collect(),
        indices,
    })
}

pub fn sample_latents<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(&[n, LATENT_DIM], |_| rng.sample(StandardNormal))
}

/// Draws `N` latents and keeps the `k` whose samples are closest to another
/// candidate in discriminator feature space.
pub fn largeebs_select<R: Rng + ?Sized>(
    gen: &Generator,
    disc: &Discriminator,
    cfg: &LargeEbsConfig,
    rng: &mut R,
) -> Result<Selection> {
    if cfg.keep > cfg.candidates {
        return Err(Error::Argument(format!(
            "keep {} exceeds candidates {}",
            cfg.keep, cfg.candidates
        )));
    }
    let latents = sample_latents(cfg.candidates, rng);
    largeebs_select_from(gen, disc, &latents, cfg.keep, cfg.tap_layer)
}
