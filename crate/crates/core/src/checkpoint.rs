//! Checkpoint file: named `f64` arrays behind a JSON header.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 0..8         | magic `WISACKPT`                                     |
//! | 8..16        | `u64` header length `H`                              |
//! | 16..16+H     | UTF-8 JSON header                                    |
//! | 16+H..       | data region: concatenated `f64` arrays               |
//!
//! The header is `{"version": 1, "meta": <any>, "tensors": [{"name", "shape",
//! "offset", "trainable"}]}` where `offset` is the byte offset of the array
//! inside the data region. Tensors are written in name order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"WISACKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(store: &ParamStore, meta: &serde_json::Value) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut data = Vec::with_capacity(store.num_scalars() * 8);
    for (name, p) in store.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.value.shape().to_vec(),
            offset: data.len() as u64,
            trainable: p.trainable,
        });
        for v in p.value.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: VERSION,
        meta: meta.clone(),
        tensors,
    };
    let hbytes = serde_json::to_vec(&header).expect("header serialization is infallible");
    let mut out = Vec::with_capacity(16 + hbytes.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hbytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&hbytes);
    out.extend_from_slice(&data);
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "checkpoint".into(),
        message: msg.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing WISACKPT magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header = crate::physchema::json::from_slice_with_path(&bytes[16..hend])?;
    if header.version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {}", header.version)));
    }
    let data = &bytes[hend..];
    let mut store = ParamStore::new();
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start
            .checked_add(n * 8)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| corrupt(format!("tensor '{}' runs past end of file", t.name)))?;
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(t.name, Tensor::new(&t.shape, values)?, t.trainable);
    }
    Ok((store, header.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(store, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits_and_flags() {
        let mut s = ParamStore::new();
        s.insert("b.w", Tensor::new(&[2, 2], vec![1.0, -0.0, 1e-300, f64::MAX]).unwrap(), true);
        s.insert("a", Tensor::vector(vec![0.5]), false);
        let meta = serde_json::json!({"vocab": ["x", "y"]});
        let bytes = encode(&s, &meta);
        let (back, m) = decode(&bytes).unwrap();
        assert!(back.bit_eq(&s));
        assert_eq!(m, meta);
        assert_eq!(encode(&back, &m), bytes);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[4]), true);
        let bytes = encode(&s, &serde_json::Value::Null);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"not a checkpoint").is_err());
    }
}
