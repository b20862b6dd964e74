//! Maximum-intensity projections of skeletons rotated about the depth axis.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::{count_branch_points, VoxelMask};
use crate::error::{Error, Result};

/// One view: `height × width` intensities in [0, 1] plus branch-point
/// marker positions (row, column).
#[derive(Clone, Debug, PartialEq)]
pub struct MipImage {
    pub angle: f64,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub markers: Vec<(usize, usize)>,
}

impl MipImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn lit(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }

    /// White skeleton on black with red branch-point markers.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (i, &v) in self.pixels.iter().enumerate() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, Rgb([g, g, g]));
        }
        for &(r, c) in &self.markers {
            for (dr, dc) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width {
                    img.put_pixel(cc as u32, rr as u32, Rgb([255, 0, 0]));
                }
            }
        }
        img.save(path)
            .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
    }
}

/// Rows are depth; columns are the in-plane axis after rotating by `angle`
/// (radians) about the depth axis. At angle 0 the projection runs along y,
/// so columns are x. The image is wide enough for every rotation.
pub fn render_mip(skel: &VoxelMask, angles: &[f64]) -> Result<Vec<MipImage>> {
    if angles.is_empty() {
        return Err(Error::Argument("render_mip needs at least one angle".into()));
    }
    let [d, h, w] = skel.dims;
    let width = ((h * h + w * w) as f64).sqrt().ceil() as usize;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mid = (width as f64 - 1.0) / 2.0;
    let branches = count_branch_points(skel);
    let on: Vec<usize> = (0..skel.data.len()).filter(|&i| skel.data[i]).collect();
    Ok(angles
        .iter()
        .map(|&angle| {
            let (s, c) = angle.sin_cos();
            let column = |y: usize, x: usize| {
                let u = (x as f64 - cx) * c - (y as f64 - cy) * s;
                (u + mid).round().clamp(0.0, (width - 1) as f64) as usize
            };
            let mut pixels = vec![0.0; d * width];
            for &i in &on {
                let [z, y, x] = skel.coords(i);
                pixels[z * width + column(y, x)] = 1.0;
            }
            let markers = branches.coords.iter().map(|&[z, y, x]| (z, column(y, x))).collect();
            MipImage {
                angle,
                height: d,
                width,
                pixels,
                markers,
            }
        })
        .collect())
}

/// `n` evenly spaced angles over a half turn.
pub fn view_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| std::f64::consts::PI * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_and_lines() {
        let dims = [8, 16, 16];
        let dot = VoxelMask::from_coords(dims, &[[3, 5, 9]]);
        for img in render_mip(&dot, &view_angles(10)).unwrap() {
            assert_eq!(img.lit(), 1);
        }
        let line: Vec<[usize; 3]> = (0..16).map(|y| [4, y, 7]).collect();
        let m = VoxelMask::from_coords(dims, &line);
        let views = render_mip(&m, &[0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        assert_eq!(views[0].lit(), 1);
        assert_eq!(views[1].lit(), 16);
        assert_eq!(render_mip(&m, &view_angles(10)).unwrap().len(), 10);
    }
}
