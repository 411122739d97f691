//! Embedding-space augmentation applied to batches of looked-up character
//! vectors: sub-character perturbation of one latent dimension (SSA) and the
//! wildcard baseline that zeroes whole positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphset::PAD;
use crate::tensor::Tensor;
use crate::vce::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsaConfig {
    /// Half-width of the uniform perturbation `u ~ U(-gamma, gamma)`.
    pub gamma: f64,
    /// Probability that a given character position is perturbed.
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> f64 {
    1.0
}

impl SsaConfig {
    pub fn new(gamma: f64) -> Self {
        SsaConfig { gamma, rate: 1.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("ssa gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("ssa rate must lie in [0, 1], got {}", self.rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WtConfig {
    pub p_wt: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WtConfig {
    fn default() -> Self {
        WtConfig { p_wt: 0.1, seed: 0 }
    }
}

impl WtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_wt) {
            return Err(Error::Config(format!("wildcard p_wt must lie in [0, 1], got {}", self.p_wt)));
        }
        Ok(())
    }
}

/// Training-time augmentation choice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    None,
    Ssa(SsaConfig),
    Wt(WtConfig),
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Augmentation::None => Ok(()),
            Augmentation::Ssa(c) => c.validate(),
            Augmentation::Wt(c) => c.validate(),
        }
    }

    /// Seed offset carried by the augmentation config.
    pub fn seed(&self) -> u64 {
        match self {
            Augmentation::None => 0,
            Augmentation::Ssa(c) => c.seed,
            Augmentation::Wt(c) => c.seed,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Augmentation::None => "none".into(),
            Augmentation::Ssa(c) => format!("ssa(gamma={}, rate={})", c.gamma, c.rate),
            Augmentation::Wt(c) => format!("wt(p={})", c.p_wt),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, batch: &mut EmbeddedBatch, rng: &mut R) -> Result<()> {
        match self {
            Augmentation::None => Ok(()),
            Augmentation::Ssa(c) => ssa_in_place(batch, c, rng),
            Augmentation::Wt(c) => wildcard_in_place(batch, c, rng),
        }
    }
}

/// `n` sequences of `c` positions, each a `d`-dim vector, stored
/// position-major (`[n, c, d]`) with a mask marking real characters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedBatch {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl EmbeddedBatch {
    pub fn new(n: usize, c: usize, d: usize, data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != n * c * d || mask.len() != n * c {
            return Err(Error::shape(
                "embedded batch",
                format!("expected {} values and {} mask entries, got {} and {}", n * c * d, n * c, data.len(), mask.len()),
            ));
        }
        Ok(EmbeddedBatch { n, c, d, data, mask })
    }

    /// Looks up each index sequence in `table`; pad positions become zeros.
    pub fn from_indices(table: &EmbeddingTable, seqs: &[&[u32]]) -> Result<Self> {
        let d = table.latent_dim();
        let c = seqs.first().map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(seqs.len() * c * d);
        let mut mask = Vec::with_capacity(seqs.len() * c);
        for (i, s) in seqs.iter().enumerate() {
            if s.len() != c {
                return Err(Error::shape("embedded batch", format!("sequence {i} has length {}, expected {c}", s.len())));
            }
            for &idx in s.iter() {
                if idx != PAD && idx as usize >= table.len() {
                    return Err(Error::Data(format!("index {idx} outside embedding table of {}", table.len())));
                }
                data.extend_from_slice(table.vector(idx));
                mask.push(idx != PAD);
            }
        }
        Ok(EmbeddedBatch { n: seqs.len(), c, d, data, mask })
    }

    pub fn vector(&self, sample: usize, pos: usize) -> &[f32] {
        let at = (sample * self.c + pos) * self.d;
        &self.data[at..at + self.d]
    }

    /// Channels-first tensor `[n, d, c]` for the 1-D convolution stack.
    pub fn to_channels_first(&self) -> Tensor<f32> {
        let (n, c, d) = (self.n, self.c, self.d);
        let mut out = vec![0.0; self.data.len()];
        for s in 0..n {
            for p in 0..c {
                for j in 0..d {
                    out[(s * d + j) * c + p] = self.data[(s * c + p) * d + j];
                }
            }
        }
        Tensor::from_vec(&[n, d, c], out)
    }
}

/// Adds `u ~ U(-gamma, gamma)` to one uniformly chosen dimension of each
/// real position, each independently with probability `rate`.
pub fn ssa<R: Rng + ?Sized>(batch: &EmbeddedBatch, cfg: &SsaConfig, rng: &mut R) -> Result<EmbeddedBatch> {
    let mut out = batch.clone();
    ssa_in_place(&mut out, cfg, rng)?;
    Ok(out)
}

pub fn ssa_in_place<R: Rng + ?Sized>(batch: &mut EmbeddedBatch, cfg: &SsaConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    // gamma = 0 must leave the bits alone (x + 0.0 would turn -0.0 into 0.0)
    if cfg.gamma == 0.0 || cfg.rate == 0.0 || batch.d == 0 {
        return Ok(());
    }
    let d = batch.d;
    for (pos, &real) in batch.mask.iter().enumerate() {
        if !real || (cfg.rate < 1.0 && !rng.gen_bool(cfg.rate)) {
            continue;
        }
        let dim = rng.gen_range(0..d);
        let u = rng.gen_range(-cfg.gamma..cfg.gamma);
        let v = &mut batch.data[pos * d + dim];
        let old = *v;
        let mut out = (old as f64 + u) as f32;
        // rounding to f32 may overshoot gamma by half an ulp
        if (out as f64 - old as f64).abs() > cfg.gamma {
            out = if out > old { out.next_down() } else { out.next_up() };
        }
        *v = out;
    }
    Ok(())
}

/// Zeroes each real position entirely with probability `p_wt`.
pub fn wildcard<R: Rng + ?Sized>(batch: &EmbeddedBatch, cfg: &WtConfig, rng: &mut R) -> Result<EmbeddedBatch> {
    let mut out = batch.clone();
    wildcard_in_place(&mut out, cfg, rng)?;
    Ok(out)
}

pub fn wildcard_in_place<R: Rng + ?Sized>(batch: &mut EmbeddedBatch, cfg: &WtConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    if cfg.p_wt == 0.0 {
        return Ok(());
    }
    let d = batch.d;
    for (pos, &real) in batch.mask.iter().enumerate() {
        if real && rng.gen_bool(cfg.p_wt) {
            batch.data[pos * d..(pos + 1) * d].fill(0.0);
        }
    }
    Ok(())
}
