//! `WTS1` weight files: named f32 tensors plus a JSON metadata sidecar.
//!
//! Layout (little-endian): magic `WTS1`, version u16, tensor count u32, then
//! per tensor: name length u32, UTF-8 name, rank u32, dims u32 × rank,
//! f32 × product(dims).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::io::Reader;
use crate::tensor::Tensor;

pub const WTS_MAGIC: &[u8; 4] = b"WTS1";
pub const WTS_VERSION: u16 = 1;

pub fn encode_weights(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 4);
    out.extend_from_slice(WTS_MAGIC);
    out.extend_from_slice(&WTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8], origin: &str) -> Result<ParamStore<f32>> {
    let mut r = Reader::new(bytes, origin);
    r.magic(WTS_MAGIC)?;
    let version = r.u16()?;
    if version != WTS_VERSION {
        return Err(Error::parse(origin, format!("unsupported WTS1 version {version}")));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?.to_vec())
            .map_err(|_| Error::parse(origin, "tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r.f32s(n)?;
        store
            .insert(name, Tensor::from_vec(&shape, data))
            .map_err(|e| Error::parse(origin, e.to_string()))?;
    }
    r.finish()?;
    Ok(store)
}

/// `model.wts` -> `model.wts.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_weights<M: Serialize>(path: &Path, store: &ParamStore<f32>, meta: &M) -> Result<()> {
    fs::write(path, encode_weights(store)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

pub fn load_weights<M: DeserializeOwned>(path: &Path) -> Result<(ParamStore<f32>, M)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let store = decode_weights(&bytes, &path.display().to_string())?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta = serde_json::from_str(&text).map_err(|e| Error::parse(side.display().to_string(), e.to_string()))?;
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("enc.conv1.weight", Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(|i| i as f32 * 0.5).collect()))
            .unwrap();
        s.insert("enc.conv1.bias", Tensor::from_vec(&[2], vec![-1.0, 1.0])).unwrap();
        s
    }

    #[test]
    fn round_trip_preserves_names_shapes_and_values() {
        let s = sample_store();
        let back = decode_weights(&encode_weights(&s), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_weights(&sample_store());
        bytes[0] = b'X';
        let err = decode_weights(&bytes, "mem").unwrap_err();
        assert!(err.to_string().contains("WTS1"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_weights(&sample_store());
        let err = decode_weights(&bytes[..bytes.len() - 3], "mem").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
