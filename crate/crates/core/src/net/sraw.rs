//! The SRAW weights file: a bit-exact binary carrier for (architecture,
//! weights) pairs.
//!
//! Layout: bytes 0-3 magic `"SRAW"`; bytes 4-7 version = 1 (u32 LE); bytes
//! 8-15 manifest length M (u64 LE); next M bytes a UTF-8 JSON manifest
//! `{input_shape, layers, num_classes, tensors}` where `tensors` lists
//! `{name, shape}` in layer order, weight before bias; then the payload:
//! each tensor's values as little-endian f32, row-major, concatenated in
//! manifest order with no padding. The manifest JSON is canonical (compact
//! serde encoding), so serialize(deserialize(file)) reproduces the file
//! byte for byte.

use super::{parametric_info, ArchitectureSpec, LayerSpec, ModelWeights, NetError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const SRAW_MAGIC: &[u8; 4] = b"SRAW";
pub const SRAW_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    input_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    num_classes: usize,
    tensors: Vec<TensorEntry>,
}

impl Manifest {
    fn for_arch(arch: &ArchitectureSpec) -> Result<Manifest, NetError> {
        let infos = parametric_info(arch)?;
        let mut tensors = Vec::with_capacity(infos.len() * 2);
        for info in &infos {
            tensors.push(TensorEntry {
                name: format!("l{}.weight", info.arch_index),
                shape: info.weight_shape.clone(),
            });
            tensors.push(TensorEntry {
                name: format!("l{}.bias", info.arch_index),
                shape: vec![info.out_size],
            });
        }
        Ok(Manifest {
            input_shape: arch.input_shape,
            layers: arch.layers.clone(),
            num_classes: arch.num_classes,
            tensors,
        })
    }

    fn arch(&self) -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Byte offsets (from the start of the SRAW image) of one parametric
/// layer's tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorLoc {
    pub weight_offset: usize,
    pub weight_bytes: usize,
    pub bias_offset: usize,
    pub bias_bytes: usize,
}

/// The exact byte layout an architecture serializes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrawLayout {
    pub header_len: usize,
    pub file_len: usize,
    pub tensors: Vec<TensorLoc>,
}

/// Computes the canonical layout for an architecture: the header length
/// (magic + version + manifest length + manifest) and every tensor's byte
/// offset. Payload offsets follow `header_len + sum of 4*numel` of all
/// preceding tensors, weight before bias, in layer order.
pub fn layout(arch: &ArchitectureSpec) -> Result<SrawLayout, NetError> {
    let manifest = serde_json::to_vec(&Manifest::for_arch(arch)?)?;
    let header_len = 4 + 4 + 8 + manifest.len();
    let infos = parametric_info(arch)?;
    let mut offset = header_len;
    let mut tensors = Vec::with_capacity(infos.len());
    for info in &infos {
        let weight_bytes = 4 * info.weight_numel();
        let bias_bytes = 4 * info.bias_numel();
        tensors.push(TensorLoc {
            weight_offset: offset,
            weight_bytes,
            bias_offset: offset + weight_bytes,
            bias_bytes,
        });
        offset += weight_bytes + bias_bytes;
    }
    Ok(SrawLayout {
        header_len,
        file_len: offset,
        tensors,
    })
}

/// Serializes a model to SRAW bytes.
pub fn encode_weights(arch: &ArchitectureSpec, weights: &ModelWeights) -> Result<Vec<u8>, NetError> {
    arch.validate()?;
    weights.validate_for(arch)?;
    let manifest = serde_json::to_vec(&Manifest::for_arch(arch)?)?;
    let payload_len: usize = weights.tensors().iter().map(|t| 4 * t.numel()).sum();
    let mut out = Vec::with_capacity(16 + manifest.len() + payload_len);
    out.extend_from_slice(SRAW_MAGIC);
    out.extend_from_slice(&SRAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in weights.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a SRAW image that starts at `bytes[0]`, without requiring the
/// buffer to end with it. Returns the model and the image's total length.
/// Used both by strict file decoding and by buffer scanning.
pub fn decode_weights_prefix(
    bytes: &[u8],
) -> Result<(ArchitectureSpec, ModelWeights, usize), NetError> {
    if bytes.len() < 16 {
        return Err(NetError::Format("buffer shorter than the SRAW header".into()));
    }
    if &bytes[0..4] != SRAW_MAGIC {
        return Err(NetError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SRAW_VERSION {
        return Err(NetError::Format(format!(
            "version mismatch: file has {version}, expected {SRAW_VERSION}"
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(NetError::Format(
            "manifest length exceeds the buffer".into(),
        ));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])?;
    let arch = manifest.arch();
    arch.validate()?;

    // the manifest's tensor list must agree with the architecture
    let expected = Manifest::for_arch(&arch)?;
    if manifest.tensors != expected.tensors {
        return Err(NetError::Format(
            "manifest tensor list does not match the declared architecture".into(),
        ));
    }

    let infos = parametric_info(&arch)?;
    let payload_len: usize = infos.iter().map(|i| 4 * (i.weight_numel() + i.bias_numel())).sum();
    let total = 16 + manifest_len + payload_len;
    if bytes.len() < total {
        return Err(NetError::Format(format!(
            "payload length mismatch: need {total} bytes, buffer has {}",
            bytes.len()
        )));
    }

    let mut offset = 16 + manifest_len;
    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor, NetError> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = bytes[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        offset += 4 * n;
        Ok(Tensor::new(shape, values)?)
    };
    let mut pairs = Vec::with_capacity(infos.len());
    for info in &infos {
        let w = read_tensor(info.weight_shape.clone())?;
        let b = read_tensor(vec![info.out_size])?;
        pairs.push((w, b));
    }
    Ok((arch, ModelWeights::from_pairs(pairs), total))
}

/// Strict whole-buffer decode: the SRAW image must span the buffer exactly.
pub fn decode_weights(bytes: &[u8]) -> Result<(ArchitectureSpec, ModelWeights), NetError> {
    let (arch, weights, total) = decode_weights_prefix(bytes)?;
    if total != bytes.len() {
        return Err(NetError::Format(format!(
            "payload length mismatch: image ends at {total} but file has {} bytes",
            bytes.len()
        )));
    }
    Ok((arch, weights))
}

pub fn save_weights(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    path: &Path,
) -> Result<(), NetError> {
    let bytes = encode_weights(arch, weights)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(ArchitectureSpec, ModelWeights), NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}
