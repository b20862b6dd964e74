//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `LUNGGAN\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor's values as little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use lunggan_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generators::{Generator, GeneratorConfig};

const MAGIC: &[u8; 8] = b"LUNGGAN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    network: String,
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in values.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
}

/// Networks restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub epoch: Option<usize>,
}

fn collect(network: &str, store: &ParamStore, entries: &mut Vec<TensorEntry>, data: &mut Vec<u8>) {
    for (_, p) in store.iter() {
        entries.push(TensorEntry {
            network: network.to_string(),
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: data.len() / 8,
        });
        for v in p.value.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    generator: &Generator,
    discriminator: Option<&Discriminator>,
    epoch: Option<usize>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    collect("generator", generator.store(), &mut tensors, &mut data);
    if let Some(d) = discriminator {
        collect("discriminator", d.store(), &mut tensors, &mut data);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        generator: generator.config().clone(),
        discriminator: discriminator.map(|d| d.config().clone()),
        epoch,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |b: &[u8]| f.write_all(b).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    write(&data)
}

fn restore(network: &str, store: &mut ParamStore, header: &Header, values: &[f64]) -> Result<()> {
    let mut seen = 0;
    for e in header.tensors.iter().filter(|e| e.network == network) {
        let id = store.id(&e.name).ok_or_else(|| {
            Error::format("checkpoint", format!("{network} has no tensor named {}", e.name))
        })?;
        if store.get(id).shape() != e.shape.as_slice() {
            return Err(Error::format(
                "checkpoint",
                format!("{} has shape {:?}, network expects {:?}", e.name, e.shape, store.get(id).shape()),
            ));
        }
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::format("checkpoint", format!("data for {} is truncated", e.name)))?;
        store.set(id, Tensor::new(&e.shape, slice.to_vec()));
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{network}: file holds {seen} tensors, network has {}", store.len()),
        ));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("checkpoint", format!("{}: {d}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let raw = &bytes[20 + hlen..];
    if raw.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut generator = Generator::new(header.generator.clone())?;
    restore("generator", generator.store_mut(), &header, &values)?;
    let discriminator = match &header.discriminator {
        Some(cfg) => {
            let mut d = Discriminator::new(cfg.clone())?;
            restore("discriminator", d.store_mut(), &header, &values)?;
            Some(d)
        }
        None => None,
    };
    Ok(Checkpoint {
        generator,
        discriminator,
        epoch: header.epoch,
    })
}
