//! Flat little-endian `f64` parameter file plus a JSON shape manifest
//! stored next to it with a `.json` suffix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Layer};
use super::{Mlp, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    w: [usize; 2],
    b: usize,
    activation: Activation,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(model: &Mlp, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut layers = Vec::new();
    for l in &model.layers {
        for v in l.params.w.data().iter().chain(l.params.b.data()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        layers.push(LayerEntry {
            w: [l.out_dim(), l.in_dim()],
            b: l.out_dim(),
            activation: l.activation,
        });
    }
    let manifest = Manifest {
        dtype: "f64-le".into(),
        layers,
    };
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    if manifest.dtype != "f64-le" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bytes = fs::read(path)?;
    let expected: usize = manifest.layers.iter().map(|e| (e.w[0] * e.w[1] + e.b) * 8).sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "manifest describes {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<_>>();
    let layers = manifest
        .layers
        .iter()
        .map(|e| {
            let w = Tensor::new(e.w.to_vec(), take(e.w[0] * e.w[1]))?;
            let b = Tensor::new(vec![e.b], take(e.b))?;
            Layer::new(w, b, e.activation)
        })
        .collect::<Result<_>>()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Mlp { layers })
}
