//! On-disk formats: MetaImage volumes, run-length masks, nodule annotation
//! tables and split manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

use super::NoduleAnnotation;

/// Voxel element types supported by the MetaImage reader and writer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Short,
    Int,
    Float,
    Double,
}

impl ElementType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "MET_UCHAR" => ElementType::UChar,
            "MET_SHORT" => ElementType::Short,
            "MET_INT" => ElementType::Int,
            "MET_FLOAT" => ElementType::Float,
            "MET_DOUBLE" => ElementType::Double,
            other => return Err(Error::format("MetaImage header", format!("unsupported ElementType {other}"))),
        })
    }

    fn tag(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Short => "MET_SHORT",
            ElementType::Int => "MET_INT",
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    fn width(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short => 2,
            ElementType::Int | ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }
}

/// A 3D MetaImage held in depth-major (z, y, x) order.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaImage {
    /// `[depth, height, width]`.
    pub dims: [usize; 3],
    /// Voxel size in mm, same axis order as `dims`.
    pub spacing: [f64; 3],
    pub element_type: ElementType,
    pub data: Vec<f64>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_header(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format("MetaImage header", format!("{}: line without '=': {line}", path.display()))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
        if k.trim() == "ElementDataFile" {
            break;
        }
    }
    Ok(map)
}

fn numbers<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::format("MetaImage header", format!("missing {key}")))?;
    raw.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::format("MetaImage header", format!("bad {key}: {raw}"))))
        .collect()
}

pub fn read_metaimage(path: &Path) -> Result<MetaImage> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let header = parse_header(&text, path)?;
    if header.get("NDims").map(String::as_str) != Some("3") {
        return Err(Error::format("MetaImage header", "only 3D images are supported"));
    }
    if header.get("CompressedData").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return Err(Error::format("MetaImage header", "compressed data is not supported"));
    }
    let msb = header
        .get("BinaryDataByteOrderMSB")
        .or_else(|| header.get("ElementByteOrderMSB"))
        .is_some_and(|v| v.eq_ignore_ascii_case("true"));
    let size: Vec<usize> = numbers(&header, "DimSize")?;
    if size.len() != 3 {
        return Err(Error::format("MetaImage header", "DimSize needs three entries"));
    }
    let spacing: Vec<f64> = if header.contains_key("ElementSpacing") {
        numbers(&header, "ElementSpacing")?
    } else {
        vec![1.0; 3]
    };
    let element_type = ElementType::parse(
        header
            .get("ElementType")
            .ok_or_else(|| Error::format("MetaImage header", "missing ElementType"))?,
    )?;
    let data_file = header
        .get("ElementDataFile")
        .ok_or_else(|| Error::format("MetaImage header", "missing ElementDataFile"))?;
    let count = size.iter().product::<usize>();
    let needed = count * element_type.width();
    let raw = if data_file == "LOCAL" {
        let start = bytes.len().checked_sub(needed).ok_or_else(|| {
            Error::format("MetaImage data", format!("{}: truncated local data", path.display()))
        })?;
        bytes[start..].to_vec()
    } else {
        let raw_path = path.parent().unwrap_or(Path::new(".")).join(data_file);
        if !raw_path.exists() {
            return Err(Error::Load(format!(
                "companion data file {} for {} is missing",
                raw_path.display(),
                path.display()
            )));
        }
        read_file(&raw_path)?
    };
    if raw.len() != needed {
        return Err(Error::format(
            "MetaImage data",
            format!("expected {needed} bytes, found {}", raw.len()),
        ));
    }
    let data = decode(&raw, element_type, msb);
    // DimSize and ElementSpacing are listed x, y, z.
    Ok(MetaImage {
        dims: [size[2], size[1], size[0]],
        spacing: [spacing[2], spacing[1], spacing[0]],
        element_type,
        data,
    })
}

fn decode(raw: &[u8], ty: ElementType, msb: bool) -> Vec<f64> {
    let w = ty.width();
    raw.chunks_exact(w)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..w].copy_from_slice(c);
            if msb {
                b[..w].reverse();
            }
            match ty {
                ElementType::UChar => b[0] as f64,
                ElementType::Short => i16::from_le_bytes([b[0], b[1]]) as f64,
                ElementType::Int => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                ElementType::Float => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                ElementType::Double => f64::from_le_bytes(b),
            }
        })
        .collect()
}

fn encode(data: &[f64], ty: ElementType) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * ty.width());
    for &v in data {
        match ty {
            ElementType::UChar => out.push(v as u8),
            ElementType::Short => out.extend_from_slice(&(v as i16).to_le_bytes()),
            ElementType::Int => out.extend_from_slice(&(v as i32).to_le_bytes()),
            ElementType::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ElementType::Double => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Writes `<path>` (header) and a `.raw` companion next to it.
pub fn write_metaimage(path: &Path, image: &MetaImage) -> Result<()> {
    let [d, h, w] = image.dims;
    if image.data.len() != d * h * w {
        return Err(Error::Shape(format!(
            "image data has {} values for dims {:?}",
            image.data.len(),
            image.dims
        )));
    }
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Argument(format!("bad output path {}", path.display())))?
        .to_string();
    let [sz, sy, sx] = image.spacing;
    let header = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         CompressedData = False\nElementSpacing = {sx} {sy} {sz}\nDimSize = {w} {h} {d}\n\
         ElementType = {}\nElementDataFile = {raw_name}\n",
        image.element_type.tag()
    );
    fs::write(path, header).map_err(|e| Error::io(path, e))?;
    fs::write(&raw_path, encode(&image.data, image.element_type)).map_err(|e| Error::io(&raw_path, e))
}

/// Reads a run-length mask: header `rle D H W`, then run lengths that
/// alternate false/true starting with false.
pub fn read_rle_mask(path: &Path) -> Result<([usize; 3], Vec<bool>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("rle") {
        return Err(Error::format("run-length mask", format!("{}: missing 'rle' header", path.display())));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format("run-length mask", "bad dimensions"))?;
    }
    let total = dims.iter().product::<usize>();
    let mut mask = Vec::with_capacity(total);
    let mut value = false;
    for t in tokens {
        let run: usize = t
            .parse()
            .map_err(|_| Error::format("run-length mask", format!("bad run length {t}")))?;
        if mask.len() + run > total {
            return Err(Error::format("run-length mask", "runs exceed the volume size"));
        }
        mask.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    if mask.len() != total {
        return Err(Error::format(
            "run-length mask",
            format!("runs cover {} of {total} voxels", mask.len()),
        ));
    }
    Ok((dims, mask))
}

pub fn write_rle_mask(path: &Path, dims: [usize; 3], mask: &[bool]) -> Result<()> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    let mut out = format!("rle {} {} {}\n", dims[0], dims[1], dims[2]);
    for chunk in runs.chunks(16) {
        let line: Vec<String> = chunk.iter().map(usize::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A binary mask from either a MetaImage (non-zero = true) or an RLE file.
pub fn read_mask(path: &Path) -> Result<([usize; 3], Vec<bool>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rle") => read_rle_mask(path),
        _ => {
            let img = read_metaimage(path)?;
            Ok((img.dims, img.data.iter().map(|&v| v != 0.0).collect()))
        }
    }
}

/// `<dir>/<stem><suffix>.mhd` or `.rle`, whichever exists.
pub fn companion(image: &Path, suffix: &str) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    let dir = image.parent().unwrap_or(Path::new("."));
    ["mhd", "rle"]
        .iter()
        .map(|ext| dir.join(format!("{stem}{suffix}.{ext}")))
        .find(|p| p.exists())
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    scan_id: String,
    nodule_id: String,
    z: usize,
    y: usize,
    x: usize,
    scores: String,
}

/// Reads nodule annotations, one voxel per row, grouped per scan in file
/// order. Columns: `scan_id,nodule_id,z,y,x,scores` with `;`-separated
/// reader scores.
pub fn read_annotations(path: &Path) -> Result<Vec<(String, Vec<NoduleAnnotation>)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format("annotation CSV", e.to_string()))?;
    let mut scans: Vec<(String, Vec<NoduleAnnotation>)> = Vec::new();
    for (line, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row = row.map_err(|e| Error::format("annotation CSV", e.to_string()))?;
        let scores = row
            .scores
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse::<u8>().map_err(|_| {
                    Error::format("annotation CSV", format!("row {}: bad score {s:?}", line + 2))
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        let scan = match scans.iter_mut().position(|(id, _)| *id == row.scan_id) {
            Some(i) => &mut scans[i].1,
            None => {
                scans.push((row.scan_id.clone(), Vec::new()));
                &mut scans.last_mut().expect("just pushed").1
            }
        };
        match scan.iter_mut().find(|n| n.nodule_id == row.nodule_id) {
            Some(n) => {
                if n.malignancy_scores != scores {
                    return Err(Error::Validation(format!(
                        "nodule {}/{} has inconsistent scores across rows",
                        row.scan_id, row.nodule_id
                    )));
                }
                n.voxels.push([row.z, row.y, row.x]);
            }
            None => scan.push(NoduleAnnotation {
                nodule_id: row.nodule_id,
                voxels: vec![[row.z, row.y, row.x]],
                malignancy_scores: scores,
            }),
        }
    }
    Ok(scans)
}

pub fn write_annotations(path: &Path, scans: &[(String, Vec<NoduleAnnotation>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("annotation CSV", e.to_string()))?;
    let fail = |e: csv::Error| Error::format("annotation CSV", e.to_string());
    w.write_record(["scan_id", "nodule_id", "z", "y", "x", "scores"]).map_err(fail)?;
    for (scan, nodules) in scans {
        for n in nodules {
            let scores: Vec<String> = n.malignancy_scores.iter().map(u8::to_string).collect();
            let scores = scores.join(";");
            for v in &n.voxels {
                w.write_record([
                    scan.as_str(),
                    n.nodule_id.as_str(),
                    &v[0].to_string(),
                    &v[1].to_string(),
                    &v[2].to_string(),
                    &scores,
                ])
                .map_err(fail)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One scan id per line; blank lines and `#` comments are skipped.
pub fn read_split_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_split_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for id in ids {
        writeln!(f, "{id}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
