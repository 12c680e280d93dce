//! Binary weights container.
//!
//! ```text
//! b"MGHF" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | payload
//! ```
//!
//! The JSON header holds the model architecture and the ordered list of
//! `{name, shape}` entries. The payload is every entry's values as
//! little-endian `f32`, concatenated in header order. Loading widens back to
//! `f64`, so a save/load round trip is exact up to `f32` rounding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DfeConfig, DfeModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGHF";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: DfeConfig,
    entries: Vec<EntryHeader>,
}

/// Decoded container: architecture plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub model: DfeConfig,
    pub entries: Vec<(EntryHeader, Vec<f64>)>,
}

pub fn encode_model(model: &DfeModel) -> Vec<u8> {
    let params = model.named_params();
    let header = Header {
        model: model.config,
        entries: params
            .iter()
            .map(|(name, shape, _)| EntryHeader {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header is plain data");
    let n_values: usize = params.iter().map(|(_, _, v)| v.len()).sum();
    let mut out = Vec::with_capacity(9 + json.len() + 4 * n_values);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &params {
        for &v in *values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return format_err("not a weights container (bad magic)");
    }
    if bytes[4] != FORMAT_VERSION {
        return format_err(format!("unsupported container version {}", bytes[4]));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = &bytes[9..];
    if body.len() < header_len {
        return format_err("truncated header");
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let mut payload = &body[header_len..];
    let mut entries = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let n: usize = e.shape.iter().product();
        if payload.len() < 4 * n {
            return format_err(format!("payload truncated at entry {}", e.name));
        }
        let values = payload[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        payload = &payload[4 * n..];
        entries.push((e, values));
    }
    if !payload.is_empty() {
        return format_err(format!("{} trailing payload bytes", payload.len()));
    }
    Ok(Container {
        model: header.model,
        entries,
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<DfeModel> {
    let c = decode(bytes)?;
    let mut model = DfeModel::zeros(c.model)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if expected.len() != c.entries.len() {
        return format_err(format!(
            "architecture needs {} tensors, container has {}",
            expected.len(),
            c.entries.len()
        ));
    }
    for ((name, shape), (entry, _)) in expected.iter().zip(&c.entries) {
        if *name != entry.name || *shape != entry.shape {
            return format_err(format!(
                "entry {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, name, shape
            ));
        }
    }
    for (slot, (_, values)) in model.params_mut().into_iter().zip(&c.entries) {
        slot.copy_from_slice(values);
    }
    Ok(model)
}

pub fn save(model: &DfeModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DfeModel> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn layout_prefix() {
        let model = DfeModel::zeros(DfeConfig::with_channels(4)).unwrap();
        let bytes = encode_model(&model);
        assert_eq!(&bytes[..4], b"MGHF");
        assert_eq!(bytes[4], 1);
        let hl = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[9..9 + hl]).unwrap();
        assert_eq!(header["entries"][0]["name"], "expand.weight");
        assert_eq!(header["entries"][0]["shape"], serde_json::json!([4, 3, 3, 3]));
        assert_eq!(bytes.len(), 9 + hl + 4 * model.param_count());
    }

    #[test]
    fn round_trip_within_f32() {
        let mut rng = Rng::new(1);
        let model = DfeModel::random(DfeConfig::with_channels(4), 1.0, &mut rng).unwrap();
        let back = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(back.config, model.config);
        for (a, b) in model.params().concat().iter().zip(back.params().concat()) {
            assert_eq!(b, *a as f32 as f64);
            assert!((a - b).abs() <= a.abs() * f32::EPSILON as f64);
        }
        // A second trip is exact.
        assert_eq!(decode_model(&encode_model(&back)).unwrap(), back);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let model = DfeModel::zeros(DfeConfig::with_channels(4)).unwrap();
        let bytes = encode_model(&model);
        assert!(decode(b"NOPE").is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
