//! Checkpoints: one file of concatenated `MTF1` tensors plus a JSON manifest
//! (`<path>.json`) listing each tensor's name, shape and byte offset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ToyNet, ToyNetConfig};
use crate::error::{Error, Result};
use crate::mtf;
use crate::nn::{Conv2d, Linear};
use crate::tensor::Tensor;
use crate::vla::GroupWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ToyNetConfig,
    pub tensors: Vec<ManifestEntry>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn named_tensors(net: &ToyNet<f32>) -> Vec<(&'static str, Tensor<f32>)> {
    let mut out = vec![
        ("conv1.weight", net.conv1.weight.clone()),
        ("conv1.bias", net.conv1.bias.clone()),
        ("conv2.weight", net.conv2.weight.clone()),
        ("conv2.bias", net.conv2.bias.clone()),
        ("head.weight", net.head.weight.clone()),
        ("head.bias", net.head.bias.clone()),
    ];
    if let Some(g) = &net.gains {
        out.push(("vla.gains", Tensor::from_parts(vec![3], g.as_array().to_vec())));
    }
    out
}

/// Writes the tensor file at `path` and its manifest beside it.
pub fn save(net: &ToyNet<f32>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in named_tensors(net) {
        tensors.push(ManifestEntry { name: name.into(), shape: t.shape().to_vec(), offset: bytes.len() });
        mtf::encode_into(&t, &mut bytes);
    }
    let manifest = Manifest { format: "MTF1".into(), config: net.config, tensors };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

pub fn load(path: &Path) -> Result<ToyNet<f32>> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format { path: mpath.clone(), reason: e.to_string() })?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut cursor = 0;
    for entry in &manifest.tensors {
        if entry.offset != cursor {
            return Err(bad(format!("{} expected at offset {cursor}, manifest says {}", entry.name, entry.offset)));
        }
        let (t, used) = mtf::decode_prefix(&bytes[cursor..]).map_err(|r| bad(format!("{}: {r}", entry.name)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(bad(format!("{} has shape {:?}, manifest says {:?}", entry.name, t.shape(), entry.shape)));
        }
        cursor += used;
        tensors.push((entry.name.as_str(), t));
    }
    if cursor != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cursor)));
    }
    let mut take = |name: &str| -> Result<Tensor<f32>> {
        let i = tensors.iter().position(|(n, _)| *n == name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        Ok(tensors.swap_remove(i).1)
    };
    let conv1 = Conv2d::new(take("conv1.weight")?, take("conv1.bias")?, 2, 1)?;
    let conv2 = Conv2d::new(take("conv2.weight")?, take("conv2.bias")?, 2, 1)?;
    let head = Linear::new(take("head.weight")?, take("head.bias")?)?;
    let gains = match manifest.config.vla {
        Some(_) => {
            let g = take("vla.gains")?;
            Some(GroupWeights::new(g.data()[0], g.data()[1], g.data()[2])?)
        }
        None => None,
    };
    let net = ToyNet { config: manifest.config, conv1, conv2, head, gains };
    if net.conv1.in_channels() != net.config.in_channels
        || net.head.inputs() != net.config.feature_dim()?
        || net.head.outputs() != net.config.n_classes
    {
        return Err(bad("tensor shapes disagree with the network config".into()));
    }
    Ok(net)
}
