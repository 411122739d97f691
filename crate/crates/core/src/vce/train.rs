use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::elbo_step;
use super::model::{Bottleneck, LatentCode, VceArch, VceModel};
use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::glyphset::GlyphDataset;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VceConfig {
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for VceConfig {
    fn default() -> Self {
        VceConfig {
            latent_dim: 10,
            beta: 8.0,
            lr: 1e-4,
            batch: 64,
            steps: 50_000,
            seed: 0,
            log_every: 100,
        }
    }
}

impl VceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("vce.latent_dim must be >= 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("vce.beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("vce.lr must be positive".into()));
        }
        if self.batch == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(Error::Config("vce.batch, vce.steps and vce.log_every must be positive".into()));
        }
        Ok(())
    }
}

/// `z = μ + α ⊙ σ` with `α ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(code: &LatentCode, rng: &mut R) -> Vec<f32> {
    code.mu
        .iter()
        .zip(&code.sigma)
        .map(|(&m, &s)| {
            let a: f32 = rng.sample(StandardNormal);
            m + a * s
        })
        .collect()
}

/// Interval averages written every `log_every` steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: Option<f64>,
    pub kl_per_dim: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLog {
    pub bottleneck: Bottleneck,
    pub rows: Vec<LogRow>,
    /// Step whose interval had the best mean ELBO; its parameters are returned.
    pub best_step: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let variational = self.bottleneck == Bottleneck::Variational;
        let dims = self
            .rows
            .first()
            .and_then(|r| r.kl_per_dim.as_ref())
            .map_or(0, Vec::len);
        s.push_str("step,total,recon");
        if variational {
            s.push_str(",kl");
            for i in 0..dims {
                let _ = write!(s, ",kl_{i}");
            }
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{:.6},{:.6}", r.step, r.total, r.recon);
            if variational {
                let _ = write!(s, ",{:.6}", r.kl.unwrap_or(0.0));
                for v in r.kl_per_dim.iter().flatten() {
                    let _ = write!(s, ",{v:.6}");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// β-VAE training on the standard 64×64 architecture.
pub fn train_vce(ds: &GlyphDataset, cfg: &VceConfig) -> Result<(VceModel, TrainLog)> {
    train_with_arch(ds, cfg, &VceArch::standard(cfg.latent_dim, Bottleneck::Variational))
}

/// Convolutional autoencoder baseline: same shells, deterministic code, no KL.
pub fn train_cae(ds: &GlyphDataset, cfg: &VceConfig) -> Result<(VceModel, TrainLog)> {
    train_with_arch(ds, cfg, &VceArch::standard(cfg.latent_dim, Bottleneck::Deterministic))
}

pub fn train_with_arch(ds: &GlyphDataset, cfg: &VceConfig, arch: &VceArch) -> Result<(VceModel, TrainLog)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("glyph dataset is empty".into()));
    }
    let side = arch.image_side;
    let pixels = side * side;
    let images: Vec<f32> = ds
        .images
        .iter()
        .flat_map(|g| g.levels().iter().map(|&v| v as f32 / 255.0))
        .collect();
    if images.len() != ds.len() * pixels {
        return Err(Error::shape("encoder", format!("dataset images are not {side}x{side}")));
    }

    let mut model = VceModel::new(arch, cfg.seed)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let adam = AdamConfig::new(cfg.lr, 0.0);
    let batch = cfg.batch.min(ds.len());
    let d = arch.latent_dim;
    let variational = arch.bottleneck == Bottleneck::Variational;

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let mut rows = Vec::new();
    let mut acc = (0.0, 0.0, 0.0, vec![0.0; d], 0usize);
    let mut best: Option<(f64, usize)> = None;
    let mut best_params = model.params.without_optimizer_state();

    for step in 1..=cfg.steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let mut xb = Vec::with_capacity(batch * pixels);
        for &i in &order[cursor..cursor + batch] {
            xb.extend_from_slice(&images[i * pixels..(i + 1) * pixels]);
        }
        cursor += batch;
        let x = Tensor::from_vec(&[batch, 1, side, side], xb);
        let noise: Vec<f32> = if variational {
            (0..batch * d).map(|_| noise_rng.sample(StandardNormal)).collect()
        } else {
            Vec::new()
        };

        let out = elbo_step(&model.nets, &model.params, &x, &noise, cfg.beta)?;
        if !out.loss.is_finite() {
            return Err(numeric_abort(step, out.loss, &model));
        }
        model.params.adam_step(&out.grads, &adam).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("step {step}: {msg}")),
            other => other,
        })?;

        let elbo = out.recon - if variational { cfg.beta * out.kl } else { 0.0 };
        acc.0 += elbo;
        acc.1 += out.recon;
        acc.2 += out.kl;
        for (a, v) in acc.3.iter_mut().zip(&out.kl_per_dim) {
            *a += v;
        }
        acc.4 += 1;

        if step % cfg.log_every == 0 || step == cfg.steps {
            let k = acc.4 as f64;
            let row = LogRow {
                step,
                total: acc.0 / k,
                recon: acc.1 / k,
                kl: variational.then(|| acc.2 / k),
                kl_per_dim: variational.then(|| acc.3.iter().map(|v| v / k).collect()),
            };
            log::info!(
                "step {step}: elbo {:.3} recon {:.3} kl {:.3}",
                row.total,
                row.recon,
                row.kl.unwrap_or(0.0)
            );
            if best.map_or(true, |(b, _)| row.total > b) {
                best = Some((row.total, step));
                best_params.copy_values_from(&model.params);
            }
            rows.push(row);
            acc = (0.0, 0.0, 0.0, vec![0.0; d], 0);
        }
    }
    model.params = best_params;
    Ok((
        model,
        TrainLog {
            bottleneck: arch.bottleneck,
            rows,
            best_step: best.map_or(cfg.steps, |(_, s)| s),
        },
    ))
}

fn numeric_abort(step: usize, loss: f64, model: &VceModel) -> Error {
    let norms: Vec<String> = model
        .params
        .norms()
        .into_iter()
        .map(|(k, v)| format!("{k}={v:.4e}"))
        .collect();
    Error::Numerical(format!(
        "loss became {loss} at step {step}; parameter norms: {}",
        norms.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterize_with_zero_sigma_returns_mean() {
        let code = LatentCode { mu: vec![0.3, -1.2], sigma: vec![0.0, 0.0] };
        let z = reparameterize(&code, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(z, code.mu);
    }

    #[test]
    fn config_validation() {
        assert!(VceConfig::default().validate().is_ok());
        let bad = VceConfig { beta: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = VceConfig { latent_dim: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cae_log_has_no_kl_columns() {
        let log = TrainLog {
            bottleneck: Bottleneck::Deterministic,
            rows: vec![LogRow { step: 100, total: -1.0, recon: -1.0, kl: None, kl_per_dim: None }],
            best_step: 100,
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("step,total,recon\n"));
        assert!(!csv.contains("kl"));
    }
}
