//! Pluggable feature extractors. Real evaluations load trained weights from
//! a conv-stack weight file; `random-conv:<seed>` builds a fixed random
//! stack, which is enough for relative comparisons and for tests.

use std::fs;
use std::path::Path;

use lunggan_tensor::ops::conv3d_forward;
use lunggan_tensor::{init, ConvGeometry, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRank {
    /// `[N, H, W]` grayscale slices.
    Slice2d,
    /// `[N, D, H, W]` volumes.
    Volume3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorDescriptor {
    pub name: String,
    pub rank: InputRank,
    pub dim: usize,
}

pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> &ExtractorDescriptor;

    /// Maps an image batch to an `[N, dim]` feature matrix.
    fn extract(&self, images: &Tensor) -> Result<Tensor>;

    /// Spatial shape of the maps before averaging, `[C, D, H, W]`, if any.
    fn map_shape(&self) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerSpec {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct WeightHeader {
    name: String,
    rank: InputRank,
    /// Side length slices are resized to (2D only).
    input_size: usize,
    layers: Vec<LayerSpec>,
}

const WEIGHT_MAGIC: &[u8; 8] = b"LGCONVW\0";

/// Convolution stack with ReLU after every layer and global spatial
/// averaging at the end. 2D inputs are replicated to 3 channels and
/// bilinearly resized to the stack's input size.
#[derive(Clone, Debug)]
pub struct ConvStackExtractor {
    descriptor: ExtractorDescriptor,
    input_size: usize,
    layers: Vec<(Tensor, ConvGeometry)>,
    map_shape: Vec<usize>,
}

fn spec(cin: usize, cout: usize, k: [usize; 3], s: [usize; 3], p: [usize; 3]) -> LayerSpec {
    LayerSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride: s,
        padding: p,
    }
}

impl ConvStackExtractor {
    fn from_parts(header: WeightHeader, weights: Vec<Tensor>) -> Result<Self> {
        if header.layers.is_empty() {
            return Err(Error::format("extractor weights", "no layers"));
        }
        let first_in = header.layers[0].in_channels;
        let expected_in = match header.rank {
            InputRank::Slice2d => 3,
            InputRank::Volume3d => 1,
        };
        if first_in != expected_in {
            return Err(Error::format(
                "extractor weights",
                format!("first layer takes {first_in} channels, expected {expected_in}"),
            ));
        }
        let mut dims = match header.rank {
            InputRank::Slice2d => [1, header.input_size, header.input_size],
            InputRank::Volume3d => [32, 64, 64],
        };
        let mut layers = Vec::new();
        let mut channels = first_in;
        for (l, w) in header.layers.iter().zip(weights) {
            if l.in_channels != channels {
                return Err(Error::format("extractor weights", "layer channel counts do not chain"));
            }
            let geom = ConvGeometry::new(l.kernel, l.stride, l.padding);
            dims = geom.conv_output(dims).ok_or_else(|| {
                Error::format("extractor weights", format!("layer collapses spatial extent {dims:?}"))
            })?;
            channels = l.out_channels;
            layers.push((w, geom));
        }
        Ok(Self {
            descriptor: ExtractorDescriptor {
                name: header.name,
                rank: header.rank,
                dim: channels,
            },
            input_size: header.input_size,
            layers,
            map_shape: vec![channels, dims[0], dims[1], dims[2]],
        })
    }

    fn random_with(name: String, rank: InputRank, input_size: usize, specs: Vec<LayerSpec>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = specs
            .iter()
            .map(|l| {
                let fan_in = l.in_channels * l.kernel.iter().product::<usize>();
                let shape = [l.out_channels, l.in_channels, l.kernel[0], l.kernel[1], l.kernel[2]];
                init::normal(&shape, 0.0, (2.0 / fan_in as f64).sqrt(), &mut rng)
            })
            .collect();
        let header = WeightHeader {
            name,
            rank,
            input_size,
            layers: specs,
        };
        Self::from_parts(header, weights).expect("built-in stacks are consistent")
    }

    /// Random 2D stack over 64×64 three-channel slices; 64-d features.
    pub fn random_2d(seed: u64) -> Self {
        let (k, s, p) = ([1, 3, 3], [1, 2, 2], [0, 1, 1]);
        Self::random_with(
            format!("random-conv:{seed}"),
            InputRank::Slice2d,
            64,
            vec![spec(3, 16, k, s, p), spec(16, 32, k, s, p), spec(32, 64, k, s, p)],
            seed,
        )
    }

    /// Random 3D stack over whole patches; 64-d features.
    pub fn random_3d(seed: u64) -> Self {
        let (k, s, p) = ([3; 3], [2; 3], [1; 3]);
        Self::random_with(
            format!("random-conv3d:{seed}"),
            InputRank::Volume3d,
            64,
            vec![spec(1, 8, k, s, p), spec(8, 16, k, s, p), spec(16, 32, k, s, p), spec(32, 64, k, s, p)],
            seed,
        )
    }

    /// Resolves an extractor argument: `random-conv:<seed>` (rank chosen by
    /// `rank`) or a path to a weight file.
    pub fn resolve(spec: &str, rank: InputRank) -> Result<Self> {
        if let Some(seed) = spec.strip_prefix("random-conv:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::config("extractor", format!("bad seed in {spec:?}")))?;
            return Ok(match rank {
                InputRank::Slice2d => Self::random_2d(seed),
                InputRank::Volume3d => Self::random_3d(seed),
            });
        }
        let e = Self::load(Path::new(spec))?;
        if e.descriptor.rank != rank {
            return Err(Error::config(
                "extractor",
                format!("{spec} expects {:?} input, this metric needs {rank:?}", e.descriptor.rank),
            ));
        }
        Ok(e)
    }

    /// Weight file: magic, `u64` header length, JSON header, then every
    /// layer's `[out, in, kd, kh, kw]` weights as little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = WeightHeader {
            name: self.descriptor.name.clone(),
            rank: self.descriptor.rank,
            input_size: self.input_size,
            layers: self
                .layers
                .iter()
                .map(|(w, g)| {
                    let s = w.shape();
                    spec(s[1], s[0], [s[2], s[3], s[4]], g.stride, g.padding)
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format("extractor weights", e.to_string()))?;
        let mut bytes = WEIGHT_MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (w, _) in &self.layers {
            for v in w.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |d: String| Error::format("extractor weights", format!("{}: {d}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != WEIGHT_MAGIC {
            return Err(bad("not an extractor weight file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: WeightHeader = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        let mut values = bytes[16 + hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut weights = Vec::new();
        for l in &header.layers {
            let shape = [l.out_channels, l.in_channels, l.kernel[0], l.kernel[1], l.kernel[2]];
            let n: usize = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad("truncated weights".into()));
            }
            weights.push(Tensor::new(&shape, data));
        }
        if values.next().is_some() {
            return Err(bad("trailing data after weights".into()));
        }
        Self::from_parts(header, weights)
    }

    fn prepare(&self, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        match self.descriptor.rank {
            InputRank::Slice2d => {
                if s.len() != 3 {
                    return Err(Error::Shape(format!("2D extractor expects [N, H, W], got {s:?}")));
                }
                let (n, size) = (s[0], self.input_size);
                let mut out = Vec::with_capacity(n * 3 * size * size);
                for i in 0..n {
                    let r = bilinear_resize(images.sample(i), s[1], s[2], size, size);
                    for _ in 0..3 {
                        out.extend_from_slice(&r);
                    }
                }
                Ok(Tensor::new(&[n, 3, 1, size, size], out))
            }
            InputRank::Volume3d => {
                if s.len() != 4 {
                    return Err(Error::Shape(format!("3D extractor expects [N, D, H, W], got {s:?}")));
                }
                Ok(images.clone().reshape(&[s[0], 1, s[1], s[2], s[3]]))
            }
        }
    }
}

impl FeatureExtractor for ConvStackExtractor {
    fn descriptor(&self) -> &ExtractorDescriptor {
        &self.descriptor
    }

    fn extract(&self, images: &Tensor) -> Result<Tensor> {
        let mut h = self.prepare(images)?;
        for (w, geom) in &self.layers {
            h = conv3d_forward(&h, w, None, geom).map(|v| v.max(0.0));
        }
        let s = h.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        let pooled = h
            .data()
            .chunks(spatial)
            .map(|m| m.iter().sum::<f64>() / spatial as f64)
            .collect();
        Ok(Tensor::new(&[n, c], pooled))
    }

    fn map_shape(&self) -> Vec<usize> {
        self.map_shape.clone()
    }
}

/// Bilinear resampling with half-pixel centres (edges clamped).
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if h == oh && w == ow {
        return src.to_vec();
    }
    let coord = |o: usize, n: usize, on: usize| {
        let x = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(n - 1), x - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
