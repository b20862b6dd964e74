//! Fréchet distances between Gaussian fits of deep features (2D central
//! slices or whole 3D patches), latent interpolation and observer-study
//! stimulus export.

pub mod extractor;
pub mod features_io;
pub mod interpolation;
pub mod observer;
pub mod sources;

use lunggan_tensor::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::PATCH_SHAPE;

pub use extractor::{ConvStackExtractor, ExtractorDescriptor, FeatureExtractor, InputRank};
pub use interpolation::{lerp, slerp};
pub use observer::{export_observer_study, ObserverManifest};
pub use sources::{ImageSource, TensorSource};

/// Diagonal jitter added on the retry when the matrix square root fails.
pub const SQRT_JITTER: f64 = 1e-6;

/// Depth index 16 of a 32-deep patch, as a `[64, 64]` image.
pub fn central_slice(patch: &Tensor) -> Result<Tensor> {
    let s = patch.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("central_slice expects [D, H, W], got {s:?}")));
    }
    let (d, h, w) = (s[0], s[1], s[2]);
    let k = d / 2;
    Ok(Tensor::new(&[h, w], patch.data()[k * h * w..(k + 1) * h * w].to_vec()))
}

/// Central slices of a `[N, D, H, W]` batch, as `[N, H, W]`.
pub fn central_slices(batch: &Tensor) -> Result<Tensor> {
    let s = batch.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("expected [N, D, H, W], got {s:?}")));
    }
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    let k = d / 2;
    let mut out = Vec::with_capacity(n * h * w);
    for i in 0..n {
        out.extend_from_slice(&batch.sample(i)[k * h * w..(k + 1) * h * w]);
    }
    Ok(Tensor::new(&[n, h, w], out))
}

/// Mean, unbiased covariance (row-major `d × d`) and sample count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.sigma)
    }
}

/// Gaussian fit of an `[N, d]` feature matrix.
pub fn gaussian_stats(features: &Tensor) -> Result<FeatureStats> {
    let s = features.shape();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::Argument(format!(
            "feature statistics need an [N, d] matrix with N >= 2, got {s:?}"
        )));
    }
    let (n, d) = (s[0], s[1]);
    let x = features.data();
    let mut mu = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| x[i * d + j] - mu[j]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    let mut sigma = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            sigma.push(cov[(i, j)]);
        }
    }
    Ok(FeatureStats { mu, sigma, n })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((Σa Σb)^{1/2})` via the symmetric form `Σa^{1/2} Σb Σa^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let ra = psd_sqrt(a);
    let m = &ra * b * &ra;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.amax().max(1.0);
    // Large negative eigenvalues mean the inputs were not PSD.
    if eig.eigenvalues.iter().any(|&l| !l.is_finite() || l < -1e-6 * scale) {
        return None;
    }
    Some(eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, clamped at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.len() != a.dim() * a.dim() || b.sigma.len() != b.dim() * b.dim() {
        return Err(Error::Shape(format!(
            "feature dimensionality differs: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (ma, mb) = (a.matrix(), b.matrix());
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum();
    let tr = ma.trace() + mb.trace();
    let covmean = match trace_sqrt_product(&ma, &mb) {
        Some(t) => t,
        None => {
            let d = a.dim();
            let jitter = DMatrix::<f64>::identity(d, d) * SQRT_JITTER;
            trace_sqrt_product(&(&ma + &jitter), &(&mb + &jitter)).ok_or_else(|| {
                Error::Numerical(format!(
                    "matrix square root failed after {SQRT_JITTER} jitter (d = {d}, traces {:.3e}, {:.3e})",
                    ma.trace(),
                    mb.trace()
                ))
            })?
        }
    };
    let value = mean_term + tr - 2.0 * covmean;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("Fréchet distance is {value}")));
    }
    Ok(value.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub extractor: ExtractorDescriptor,
    /// Spatial extent the extractor's maps had before averaging.
    pub feature_map_shape: Vec<usize>,
}

/// FID between precomputed `[N, d]` feature matrices.
pub fn fid_from_features(real: &Tensor, fake: &Tensor) -> Result<f64> {
    frechet_distance(&gaussian_stats(real)?, &gaussian_stats(fake)?)
}

/// Pulls exactly `n` images from `source` and extracts their features.
pub fn extract_n(
    source: &mut dyn ImageSource,
    extractor: &dyn FeatureExtractor,
    n: usize,
    batch: usize,
) -> Result<Tensor> {
    let mut rows: Vec<f64> = Vec::new();
    let mut got = 0;
    let dim = extractor.descriptor().dim;
    while got < n {
        let want = batch.min(n - got);
        let images = source
            .next_batch(want)?
            .ok_or_else(|| Error::Sampling(format!("image source exhausted after {got} of {n} images")))?;
        let s = images.shape();
        if s.len() != 4 || s[1..] != PATCH_SHAPE {
            return Err(Error::Shape(format!("image source yielded {s:?}, expected [B, 32, 64, 64]")));
        }
        let take = images.batch().min(n - got);
        let images = if take < images.batch() {
            images.select(&(0..take).collect::<Vec<_>>())
        } else {
            images
        };
        let input = match extractor.descriptor().rank {
            InputRank::Slice2d => central_slices(&images)?,
            InputRank::Volume3d => images,
        };
        let f = extractor.extract(&input)?;
        if f.shape() != [take, dim] {
            return Err(Error::Shape(format!(
                "extractor returned {:?}, expected [{take}, {dim}]",
                f.shape()
            )));
        }
        rows.extend_from_slice(f.data());
        got += take;
    }
    Ok(Tensor::new(&[n, dim], rows))
}

/// FID over exactly `n` real and `n` fake images.
pub fn compute_fid(
    real: &mut dyn ImageSource,
    fake: &mut dyn ImageSource,
    extractor: &dyn FeatureExtractor,
    n: usize,
) -> Result<FidResult> {
    let batch = 16;
    let fr = extract_n(real, extractor, n, batch)?;
    let ff = extract_n(fake, extractor, n, batch)?;
    Ok(FidResult {
        value: fid_from_features(&fr, &ff)?,
        n_real: n,
        n_fake: n,
        extractor: extractor.descriptor().clone(),
        feature_map_shape: extractor.map_shape(),
    })
}
