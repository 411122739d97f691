use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate_whole;
use super::model::{build_network, init_params, softmax, ClcnnArch, ClcnnModel};
use crate::augment::{Augmentation, EmbeddedBatch};
use crate::autodiff::{grad_check, AdamConfig, GradCheckConfig, GradCheckReport, Gradients, Network, ParamStore, Probe};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::textcorpus::EncodedSample;
use crate::vce::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClcnnConfig {
    pub c: usize,
    pub channels: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub augmentation: Augmentation,
    pub seed: u64,
}

impl Default for ClcnnConfig {
    fn default() -> Self {
        ClcnnConfig {
            c: 80,
            channels: 512,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch: 256,
            max_epochs: 200,
            patience: 10,
            augmentation: Augmentation::None,
            seed: 0,
        }
    }
}

impl ClcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("clcnn.lr must be positive and clcnn.weight_decay non-negative".into()));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("clcnn.batch, clcnn.max_epochs and clcnn.patience must be positive".into()));
        }
        self.augmentation.validate()
    }

    pub fn arch(&self, d: usize, classes: usize) -> Result<ClcnnArch> {
        ClcnnArch::new(self.c, d, self.channels, classes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub augmentation: Augmentation,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
}

pub struct CeOutput<T> {
    pub loss: f64,
    pub correct: usize,
    pub grads: Gradients<T>,
    pub signature: u64,
}

/// Mean softmax cross-entropy over the batch, with gradients.
pub fn ce_step<T: Scalar>(net: &Network, params: &ParamStore<T>, x: &Tensor<T>, labels: &[usize]) -> Result<CeOutput<T>> {
    let n = x.shape()[0];
    if labels.len() != n {
        return Err(Error::shape("cross-entropy", format!("{} labels for batch of {n}", labels.len())));
    }
    let tape = net.forward_train(params, x)?;
    let logits = tape.output();
    let k = logits.len() / n.max(1);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut dlogits = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let row64: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let m = row64.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row64.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row64[y];
        let mut best = 0;
        for (j, &v) in row64.iter().enumerate() {
            if v > row64[best] {
                best = j;
            }
            let p = (v - lse).exp();
            let g = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
            dlogits.push(T::lit(g));
        }
        correct += (best == y) as usize;
    }
    let mut grads = params.zero_grads();
    net.backward(params, &tape, Tensor::from_vec(logits.shape(), dlogits), &mut grads, false);
    Ok(CeOutput {
        loss: loss / n as f64,
        correct,
        grads,
        signature: tape.kink_signature(net),
    })
}

/// Finite-difference check of [`ce_step`] on random inputs, in 64-bit.
pub fn check_ce_gradients(arch: &ClcnnArch, batch: usize, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let net = build_network(arch)?;
    let params: ParamStore<f64> = init_params(&net, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::from_vec(
        &[batch, arch.d, arch.c],
        (0..batch * arch.d * arch.c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..arch.classes)).collect();
    ce_step(&net, &params, &x, &labels)?;
    Ok(grad_check(&params, cfg, |p| {
        let out = ce_step(&net, p, &x, &labels).expect("validated above");
        Probe {
            loss: out.loss,
            grads: out.grads,
            signature: out.signature,
        }
    }))
}

pub(crate) fn embed(table: &EmbeddingTable, samples: &[&EncodedSample], c: usize) -> Result<EmbeddedBatch> {
    let seqs: Vec<&[u32]> = samples.iter().map(|s| s.indices.as_slice()).collect();
    if let Some(s) = seqs.iter().find(|s| s.len() != c) {
        return Err(Error::shape("clcnn input", format!("sample has length {}, classifier expects c={c}", s.len())));
    }
    EmbeddedBatch::from_indices(table, &seqs)
}

/// Adam on mean cross-entropy with early stopping on validation accuracy;
/// returns the best-validation parameters.
pub fn train_classifier(
    table: &EmbeddingTable,
    train: &[EncodedSample],
    val: &[EncodedSample],
    classes: usize,
    cfg: &ClcnnConfig,
) -> Result<(ClcnnModel, History)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("classifier needs non-empty training and validation sets".into()));
    }
    let arch = cfg.arch(table.latent_dim(), classes)?;
    let mut model = ClcnnModel::new(&arch, cfg.seed)?;
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2) ^ cfg.augmentation.seed().rotate_left(32));

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params = model.params.without_optimizer_state();
    let mut best: Option<(f64, usize)> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let samples: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let mut batch = embed(table, &samples, arch.c)?;
            cfg.augmentation.apply(&mut batch, &mut aug_rng)?;
            let out = ce_step(&model.net, &model.params, &batch.to_channels_first(), &labels)?;
            if !out.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "cross-entropy became {} at epoch {epoch}, batch {bi}",
                    out.loss
                )));
            }
            model.params.adam_step(&out.grads, &adam).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
        }
        let val_acc = evaluate_whole(&model, table, val)?.accuracy;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4}",
            rec.train_loss,
            rec.train_acc,
            rec.val_acc
        );
        epochs.push(rec);
        if best.map_or(true, |(b, _)| val_acc > b) {
            best = Some((val_acc, epoch));
            best_params.copy_values_from(&model.params);
        } else if epoch - best.map_or(0, |(_, e)| e) >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_val_acc, best_epoch) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok((
        model,
        History {
            augmentation: cfg.augmentation.clone(),
            epochs,
            best_epoch,
            best_val_acc,
            stopped_early,
        },
    ))
}

/// Class probabilities for one channels-first sample batch.
pub fn predict_probs(model: &ClcnnModel, x: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let logits = model.logits(x)?;
    let k = model.arch.classes;
    Ok(logits.data().chunks(k).map(softmax).collect())
}
