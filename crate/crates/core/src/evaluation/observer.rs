//! Blinded real-vs-fake stimulus sets for reader studies.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::GrayImage;
use lunggan_tensor::Tensor;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::central_slices;
use crate::error::{Error, Result};

/// Images of each class in one study.
pub const PER_CLASS: usize = 100;
/// Independent presentation orders for repeat readings.
pub const READING_ORDERS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverManifest {
    /// Every stimulus filename, sorted.
    pub files: Vec<String>,
    /// Sealed key file (filename → real/fake).
    pub key_file: String,
    /// One file per reading session, listing stimuli in presentation order.
    pub order_files: Vec<String>,
}

/// Maps `[-1, 1]` to 8-bit grey, clamping out-of-range values.
pub fn to_u8(v: f64) -> u8 {
    (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, slice: &[f64], h: usize, w: usize) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, slice.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}

fn anonymous_name<R: Rng + ?Sized>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let name = format!("{:012x}.png", rng.random::<u64>() & 0xffff_ffff_ffff);
        if used.insert(name.clone()) {
            return name;
        }
    }
}

/// Writes 100 real and 100 fake central slices under random names, the key
/// CSV and three shuffled reading orders.
pub fn export_observer_study<R: Rng + ?Sized>(
    real: &Tensor,
    fake: &Tensor,
    rng: &mut R,
    out_dir: &Path,
) -> Result<ObserverManifest> {
    for (label, t) in [("real", real), ("fake", fake)] {
        if t.ndim() != 4 || t.batch() < PER_CLASS {
            return Err(Error::Argument(format!(
                "observer study needs at least {PER_CLASS} {label} patches, got shape {:?}",
                t.shape()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut used = HashSet::new();
    let mut entries: Vec<(String, &str)> = Vec::new();
    for (label, t) in [("real", real), ("fake", fake)] {
        let all: Vec<usize> = (0..t.batch()).collect();
        let chosen: Vec<usize> = all.choose_multiple(rng, PER_CLASS).copied().collect();
        let slices = central_slices(&t.select(&chosen))?;
        let (h, w) = (slices.shape()[1], slices.shape()[2]);
        for i in 0..PER_CLASS {
            let name = anonymous_name(rng, &mut used);
            write_png(&out_dir.join(&name), slices.sample(i), h, w)?;
            entries.push((name, label));
        }
    }
    entries.sort();

    let key_file = "key.csv".to_string();
    let key_path = out_dir.join(&key_file);
    let mut key = csv::Writer::from_path(&key_path).map_err(|e| Error::format("key csv", e.to_string()))?;
    key.write_record(["filename", "label"])
        .and_then(|_| entries.iter().try_for_each(|(f, l)| key.write_record([f.as_str(), l])))
        .and_then(|_| key.flush().map_err(csv::Error::from))
        .map_err(|e| Error::format("key csv", e.to_string()))?;

    let files: Vec<String> = entries.iter().map(|(f, _)| f.clone()).collect();
    let mut order_files = Vec::new();
    for r in 1..=READING_ORDERS {
        let mut order = files.clone();
        order.shuffle(rng);
        let name = format!("order_{r}.txt");
        let path = out_dir.join(&name);
        fs::write(&path, order.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        order_files.push(name);
    }
    let manifest = ObserverManifest {
        files,
        key_file,
        order_files,
    };
    let path = out_dir.join("stimuli.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a key CSV back into (filename, label) pairs.
pub fn read_observer_key(path: &Path) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("key csv", e.to_string()))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format("key csv", e.to_string()))?;
            Ok((rec[0].to_string(), rec[1].to_string()))
        })
        .collect()
}
