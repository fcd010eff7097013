//! Clip tensor file: a 16-byte header (`WCLP`, then `u32` frames, height,
//! width) followed by little-endian `f32` samples in frame-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"WCLP";
pub const HEADER_LEN: usize = 16;

pub fn encode_clip(clip: &Tensor) -> Result<Vec<u8>> {
    let s = clip.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("clip must be [frames, height, width], got {s:?}")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + clip.len() * 4);
    out.extend_from_slice(MAGIC);
    for &d in s {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in clip.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_clip(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Parse {
        path: "clip".into(),
        message: m.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing WCLP header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(bad("payload size does not match header"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_clip(path: &Path, clip: &Tensor) -> Result<()> {
    std::fs::write(path, encode_clip(clip)?).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let clip = Tensor::new(&[2, 1, 3], vec![-1.0, 0.5, 0.25, 1.0, 0.0, -0.75]).unwrap();
        let bytes = encode_clip(&clip).unwrap();
        assert_eq!(&bytes[..4], b"WCLP");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(decode_clip(&bytes).unwrap(), clip);
        assert!(decode_clip(&bytes[..20]).is_err());
    }
}
