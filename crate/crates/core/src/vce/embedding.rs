//! Per-character embedding table and its `EMB1` file format.
//!
//! Layout (little-endian): magic `EMB1`, version u16, latent dim u32,
//! count u32, charset SHA-256 (32 bytes), then per entry: codepoint u32,
//! `mu` f32 × d, `sigma` f32 × d.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::loss::kl_dim;
use super::model::VceModel;
use crate::error::{Error, Result};
use crate::glyphset::{hex_string, Charset, GlyphDataset, PAD};
use crate::io::Reader;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingEntry {
    pub codepoint: char,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

/// Embeddings aligned with charset order; [`PAD`] maps to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    charset_hash: [u8; 32],
    latent_dim: usize,
    entries: Vec<EmbeddingEntry>,
    index: HashMap<char, usize>,
    zero: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimStats {
    pub mean: f64,
    pub std: f64,
    /// Mean over characters of the per-dimension KL to the prior.
    pub mean_kl: f64,
}

impl EmbeddingTable {
    pub fn new(charset_hash: [u8; 32], latent_dim: usize, entries: Vec<EmbeddingEntry>) -> Result<Self> {
        for e in &entries {
            if e.mu.len() != latent_dim || e.sigma.len() != latent_dim {
                return Err(Error::Data(format!(
                    "entry {:?} has dimension {} / {}, expected {latent_dim}",
                    e.codepoint,
                    e.mu.len(),
                    e.sigma.len()
                )));
            }
        }
        let index: HashMap<char, usize> = entries.iter().enumerate().map(|(i, e)| (e.codepoint, i)).collect();
        if index.len() != entries.len() {
            return Err(Error::Data("duplicate codepoints in embedding table".into()));
        }
        Ok(EmbeddingTable {
            charset_hash,
            latent_dim,
            entries,
            index,
            zero: vec![0.0; latent_dim],
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn charset_hash(&self) -> &[u8; 32] {
        &self.charset_hash
    }

    pub fn charset_hash_hex(&self) -> String {
        hex_string(&self.charset_hash)
    }

    pub fn matches(&self, charset: &Charset) -> bool {
        self.charset_hash == charset.hash()
    }

    pub fn entries(&self) -> &[EmbeddingEntry] {
        &self.entries
    }

    pub fn lookup(&self, c: char) -> Option<&EmbeddingEntry> {
        self.index.get(&c).map(|&i| &self.entries[i])
    }

    pub fn position(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Mean vector for a charset index; the pad sentinel gives zeros.
    pub fn vector(&self, index: u32) -> &[f32] {
        if index == PAD {
            &self.zero
        } else {
            &self.entries[index as usize].mu
        }
    }

    /// Up to `k` table codepoints closest to `c` (by codepoint distance).
    pub fn nearest_codepoints(&self, c: char, k: usize) -> Vec<char> {
        let mut v: Vec<char> = self.entries.iter().map(|e| e.codepoint).collect();
        v.sort_by_key(|&e| ((e as i64 - c as i64).abs(), e));
        v.truncate(k);
        v
    }

    pub fn unknown_char_error(&self, c: char) -> Error {
        let nearest: Vec<String> = self
            .nearest_codepoints(c, 5)
            .into_iter()
            .map(|n| format!("{n} (U+{:04X})", n as u32))
            .collect();
        Error::UnknownChar {
            ch: c,
            code: c as u32,
            nearest: nearest.join(", "),
        }
    }

    pub fn dim_stats(&self) -> Vec<DimStats> {
        let n = self.entries.len().max(1) as f64;
        (0..self.latent_dim)
            .map(|j| {
                let mean = self.entries.iter().map(|e| e.mu[j] as f64).sum::<f64>() / n;
                let var = self
                    .entries
                    .iter()
                    .map(|e| (e.mu[j] as f64 - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let mean_kl = self
                    .entries
                    .iter()
                    .map(|e| kl_dim(e.mu[j] as f64, e.sigma[j] as f64))
                    .sum::<f64>()
                    / n;
                DimStats {
                    mean,
                    std: var.sqrt(),
                    mean_kl,
                }
            })
            .collect()
    }

    /// Mean over characters of the total KL (nats).
    pub fn mean_total_kl(&self) -> f64 {
        self.dim_stats().iter().map(|s| s.mean_kl).sum()
    }

    /// Dimensions whose mean KL exceeds `threshold` nats.
    pub fn active_dims(&self, threshold: f64) -> Vec<usize> {
        self.dim_stats()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.mean_kl > threshold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-dimension `(min, max)` of the stored means.
    pub fn mu_range(&self) -> Vec<(f32, f32)> {
        (0..self.latent_dim)
            .map(|j| {
                self.entries.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), e| {
                    (lo.min(e.mu[j]), hi.max(e.mu[j]))
                })
            })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.latent_dim;
        let mut out = Vec::with_capacity(46 + self.entries.len() * (4 + 8 * d));
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&EMB_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.charset_hash);
        for e in &self.entries {
            out.extend_from_slice(&(e.codepoint as u32).to_le_bytes());
            for v in e.mu.iter().chain(&e.sigma) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        r.magic(EMB_MAGIC)?;
        let version = r.u16()?;
        if version != EMB_VERSION {
            return Err(Error::parse(origin, format!("unsupported EMB1 version {version}")));
        }
        let d = r.u32()? as usize;
        let count = r.u32()? as usize;
        let hash: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let cp = r.u32()?;
            let codepoint = char::from_u32(cp)
                .ok_or_else(|| Error::parse(origin, format!("entry {i}: invalid codepoint {cp:#x}")))?;
            let mu = r.f32s(d)?;
            let sigma = r.f32s(d)?;
            entries.push(EmbeddingEntry { codepoint, mu, sigma });
        }
        r.finish()?;
        EmbeddingTable::new(hash, d, entries).map_err(|e| Error::parse(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::decode(&bytes, &path.display().to_string())
    }
}

/// Encoder means and standard deviations for every dataset character.
pub fn export_embeddings(model: &VceModel, ds: &GlyphDataset) -> Result<EmbeddingTable> {
    let codes = model.encode_all(&ds.images, 256)?;
    let entries = ds
        .images
        .iter()
        .zip(codes)
        .map(|(img, code)| EmbeddingEntry {
            codepoint: img.codepoint,
            mu: code.mu,
            sigma: code.sigma,
        })
        .collect();
    EmbeddingTable::new(ds.charset.hash(), model.latent_dim(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphset::GETA;

    fn table() -> EmbeddingTable {
        let cs = Charset::from_chars(['a', 'b', GETA]).unwrap();
        let entries = cs
            .entries()
            .iter()
            .enumerate()
            .map(|(i, &c)| EmbeddingEntry {
                codepoint: c,
                mu: vec![i as f32, -(i as f32)],
                sigma: vec![1.0, 0.5],
            })
            .collect();
        EmbeddingTable::new(cs.hash(), 2, entries).unwrap()
    }

    #[test]
    fn pad_is_zero_vector() {
        let t = table();
        assert_eq!(t.vector(PAD), &[0.0, 0.0]);
        assert_eq!(t.vector(1), &[1.0, -1.0]);
    }

    #[test]
    fn emb1_round_trip() {
        let t = table();
        assert_eq!(EmbeddingTable::decode(&t.encode(), "mem").unwrap(), t);
    }

    #[test]
    fn emb1_rejects_bad_magic_and_truncation() {
        let mut b = table().encode();
        let cut = EmbeddingTable::decode(&b[..b.len() - 1], "mem").unwrap_err().to_string();
        assert!(cut.contains("truncated"), "{cut}");
        b[0] = b'X';
        let bad = EmbeddingTable::decode(&b, "mem").unwrap_err().to_string();
        assert!(bad.contains("EMB1"), "{bad}");
    }

    #[test]
    fn unknown_char_error_lists_neighbors() {
        let msg = table().unknown_char_error('c').to_string();
        assert!(msg.contains("U+0062"), "{msg}");
    }

    #[test]
    fn stats_per_dimension() {
        let s = table().dim_stats();
        assert!((s[0].mean - 1.0).abs() < 1e-12);
        assert!((s[0].std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
