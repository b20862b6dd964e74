//! Dataset and patch-directory loading shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use lunggan_core::generators::PATCH_SHAPE;
use lunggan_core::patch_pipeline::io::{
    read_annotations, read_metaimage, read_split_manifest, write_metaimage, ElementType, MetaImage,
};
use lunggan_core::patch_pipeline::phantom::{phantom_dataset, PhantomConfig};
use lunggan_core::patch_pipeline::{filter_malignant_scans, load_ct_volume, CtVolume};
use lunggan_core::{Error, Result, Tensor};

use crate::settings::Settings;

/// Settings every data-consuming command declares.
pub const DATA_KEYS: [(&str, &str); 4] = [
    ("data.dir", ""),
    ("data.annotations", ""),
    ("data.split", ""),
    ("data.phantom_scans", "0"),
];

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mhd"))
        .filter(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            !stem.ends_with("_lung") && !stem.ends_with("_nodule")
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Kept scans: every `.mhd` in `data.dir`, restricted to the split
/// manifest and to scans without malignant nodules when those files are
/// given. With no directory, `data.phantom_scans` synthetic scans.
pub fn load_dataset(s: &Settings, seed: u64) -> Result<Vec<CtVolume>> {
    let Some(dir) = s.path("data.dir") else {
        let n: usize = s.get("data.phantom_scans")?;
        if n == 0 {
            return Err(Error::config("data.dir", "required (or set data.phantom_scans)"));
        }
        return Ok(phantom_dataset(n, seed, &PhantomConfig::default()));
    };
    let mut keep: Option<Vec<String>> = match s.path("data.split") {
        Some(p) => Some(read_split_manifest(&p)?),
        None => None,
    };
    if let Some(p) = s.path("data.annotations") {
        let benign = filter_malignant_scans(&read_annotations(&p)?)?;
        let annotated: Vec<String> = read_annotations(&p)?.into_iter().map(|(id, _)| id).collect();
        let allowed = |id: &String| benign.contains(id) || !annotated.contains(id);
        keep = Some(match keep {
            Some(k) => k.into_iter().filter(allowed).collect(),
            None => image_files(&dir)?
                .iter()
                .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(String::from))
                .filter(allowed)
                .collect(),
        });
    }
    let mut volumes = Vec::new();
    for path in image_files(&dir)? {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if keep.as_ref().is_none_or(|k| k.contains(&id)) {
            volumes.push(load_ct_volume(&path)?);
        }
    }
    if volumes.is_empty() {
        return Err(Error::Load(format!("no usable scans in {}", dir.display())));
    }
    Ok(volumes)
}

/// All 32×64×64 patches stored as `.mhd` files in `dir`, in name order.
pub fn read_patch_dir(dir: &Path) -> Result<Tensor> {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::Load(format!("no .mhd patches in {}", dir.display())));
    }
    let per: usize = PATCH_SHAPE.iter().product();
    let mut data = Vec::with_capacity(files.len() * per);
    for f in &files {
        let img = read_metaimage(f)?;
        if img.dims != PATCH_SHAPE {
            return Err(Error::Shape(format!(
                "{} has shape {:?}, expected {PATCH_SHAPE:?}",
                f.display(),
                img.dims
            )));
        }
        data.extend(img.data);
    }
    let s = PATCH_SHAPE;
    Ok(Tensor::new(&[files.len(), s[0], s[1], s[2]], data))
}

/// Writes each patch as `<prefix>_<index>.mhd` (32-bit float).
pub fn write_patch_dir(dir: &Path, prefix: &str, patches: &Tensor) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..patches.batch())
        .map(|i| {
            let p = dir.join(format!("{prefix}_{i:05}.mhd"));
            write_metaimage(
                &p,
                &MetaImage {
                    dims: PATCH_SHAPE,
                    spacing: [1.0; 3],
                    element_type: ElementType::Float,
                    data: patches.sample(i).to_vec(),
                },
            )?;
            Ok(p)
        })
        .collect()
}
