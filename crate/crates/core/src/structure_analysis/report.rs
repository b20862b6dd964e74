//! Branch-count tables and ROC reports.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::RocCurve;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCountRow {
    pub patch_id: String,
    /// `real` or `fake`.
    pub source: String,
    pub count: u32,
}

pub fn write_branch_counts(path: &Path, rows: &[BranchCountRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("branch-count csv", e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format("branch-count csv", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_branch_counts(path: &Path) -> Result<Vec<BranchCountRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("branch-count csv", e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format("branch-count csv", format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_roc_json(path: &Path, roc: &RocCurve) -> Result<()> {
    let json = serde_json::to_string_pretty(roc).map_err(|e| Error::format("roc report", e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// The curve on a `size × size` canvas with the chance diagonal in grey.
pub fn plot_roc(path: &Path, roc: &RocCurve, size: u32) -> Result<()> {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let px = |f: f64, t: f64| {
        let s = (size - 1) as f64;
        ((f * s).round() as i64, ((1.0 - t) * s).round() as i64)
    };
    let mut segment = |a: (i64, i64), b: (i64, i64), colour: Rgb<u8>| {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
        for k in 0..=steps {
            let x = a.0 + (b.0 - a.0) * k / steps;
            let y = a.1 + (b.1 - a.1) * k / steps;
            if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                img.put_pixel(x as u32, y as u32, colour);
            }
        }
    };
    segment(px(0.0, 0.0), px(1.0, 1.0), Rgb([180, 180, 180]));
    for i in 1..roc.fpr.len() {
        segment(px(roc.fpr[i - 1], roc.tpr[i - 1]), px(roc.fpr[i], roc.tpr[i]), Rgb([200, 30, 30]));
    }
    img.save(path)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}
