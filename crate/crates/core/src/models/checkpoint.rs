//! Checkpoint files.
//!
//! Layout: `HHAR` magic, one format-version byte, a little-endian `u32`
//! header length, the JSON header, a `u32` CRC-32 of the header, then every
//! tensor as little-endian `f64` in header order. The header records the
//! spec, class names, tensor names and shapes, and a CRC-32 of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::signal::NormStats;
use crate::tensor::Tensor;

use super::spec::{ModelSpec, ProbeSpec};
use super::{HierarchicalModel, ProbeHead};

pub const FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"HHAR";
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Meta {
    Hierarchical { spec: ModelSpec },
    Probe { spec: ProbeSpec },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: Meta,
    class_names: Vec<String>,
    tensors: Vec<(String, Vec<usize>)>,
    payload_len: u64,
    payload_crc32: u32,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn encode(meta: Meta, class_names: &[String], tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(tensors.iter().map(|t| 8 * t.1.len()).sum());
    for (_, t) in tensors {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        meta,
        class_names: class_names.to_vec(),
        tensors: tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect(),
        payload_len: payload.len() as u64,
        payload_crc32: crc32fast::hash(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(13 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Meta, Vec<String>, Vec<(String, Tensor)>)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            found: bytes[4],
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header_end = 9 + hlen;
    if bytes.len() < header_end + 4 {
        return Err(corrupt("truncated header"));
    }
    let json = &bytes[9..header_end];
    let crc = u32::from_le_bytes(bytes[header_end..header_end + 4].try_into().unwrap());
    if crc != crc32fast::hash(json) {
        return Err(corrupt("header checksum mismatch"));
    }
    let header: Header =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let payload = &bytes[header_end + 4..];
    if payload.len() as u64 != header.payload_len {
        return Err(corrupt(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_len
        )));
    }
    if crc32fast::hash(payload) != header.payload_crc32 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut used = 0usize;
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        used += n;
        if used * 8 > payload.len() {
            return Err(corrupt("tensor table exceeds payload"));
        }
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| corrupt(e.to_string()))?;
        tensors.push((name, t));
    }
    if used * 8 != payload.len() {
        return Err(corrupt("payload has trailing data"));
    }
    Ok((header.meta, header.class_names, tensors))
}

/// Replaces every value in `params` with the same-named tensor in `loaded`.
pub(crate) fn overwrite_params(params: &mut ParamSet, loaded: ParamSet) -> Result<()> {
    if loaded.len() != params.len() {
        return Err(corrupt(format!(
            "checkpoint holds {} tensors, architecture needs {}",
            loaded.len(),
            params.len()
        )));
    }
    for (name, t) in loaded.iter() {
        let slot = params
            .get_mut(name)
            .ok_or_else(|| corrupt(format!("unexpected tensor `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(corrupt(format!(
                "tensor `{name}` has shape {:?}",
                t.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

fn collect(tensors: Vec<(String, Tensor)>) -> Result<(ParamSet, Option<Tensor>, Option<Tensor>)> {
    let mut params = ParamSet::new();
    let (mut mean, mut std) = (None, None);
    for (name, t) in tensors {
        match name.as_str() {
            NORM_MEAN => mean = Some(t),
            NORM_STD => std = Some(t),
            _ => {
                params.add(name, t).map_err(|e| corrupt(e.to_string()))?;
            }
        }
    }
    Ok((params, mean, std))
}

pub fn model_to_bytes(model: &HierarchicalModel) -> Result<Vec<u8>> {
    let mean = Tensor::vector(model.norm().mean.clone());
    let std = Tensor::vector(model.norm().std.clone());
    let mut tensors: Vec<(String, &Tensor)> = model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    tensors.push((NORM_MEAN.into(), &mean));
    tensors.push((NORM_STD.into(), &std));
    encode(
        Meta::Hierarchical {
            spec: model.spec().clone(),
        },
        model.class_names(),
        &tensors,
    )
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<HierarchicalModel> {
    let (meta, class_names, tensors) = decode(bytes)?;
    let Meta::Hierarchical { spec } = meta else {
        return Err(corrupt(
            "checkpoint holds a probe, not a hierarchical model",
        ));
    };
    let (params, mean, std) = collect(tensors)?;
    let (Some(mean), Some(std)) = (mean, std) else {
        return Err(corrupt("normalization statistics missing"));
    };
    let mut model =
        HierarchicalModel::new(spec, class_names, 0).map_err(|e| corrupt(e.to_string()))?;
    overwrite_params(model.params_mut(), params)?;
    model.set_norm(NormStats {
        mean: mean.into_data(),
        std: std.into_data(),
    })?;
    Ok(model)
}

pub fn save_model(model: &HierarchicalModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HierarchicalModel> {
    model_from_bytes(&std::fs::read(path)?)
}

pub fn save_probe(probe: &ProbeHead, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<(String, &Tensor)> = probe
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    let bytes = encode(
        Meta::Probe {
            spec: *probe.spec(),
        },
        probe.class_names(),
        &tensors,
    )?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<ProbeHead> {
    let (meta, class_names, tensors) = decode(&std::fs::read(path)?)?;
    let Meta::Probe { spec } = meta else {
        return Err(corrupt(
            "checkpoint holds a hierarchical model, not a probe",
        ));
    };
    let (params, _, _) = collect(tensors)?;
    ProbeHead::from_parts(spec, class_names, params)
}
