use std::path::Path;

use rand::rngs::mock::StepRng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, ClcnnArch, ClcnnModel};
use super::train::{embed, predict_probs};
use crate::augment::Augmentation;
use crate::autodiff::{load_weights, save_weights};
use crate::error::{Error, Result};
use crate::glyphset::Charset;
use crate::textcorpus::{crop_windows, CropMode, EncodedSample};
use crate::vce::EmbeddingTable;

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WholeEval {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate_whole(model: &ClcnnModel, table: &EmbeddingTable, samples: &[EncodedSample]) -> Result<WholeEval> {
    let k = model.arch.classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut predictions = Vec::with_capacity(samples.len());
    let mut correct = 0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        let batch = embed(table, &refs, model.arch.c)?;
        let logits = model.logits(&batch.to_channels_first())?;
        for (row, s) in logits.data().chunks(k).zip(chunk) {
            if s.label >= k {
                return Err(Error::Data(format!("label {} outside {k} classes", s.label)));
            }
            let p = argmax(row);
            confusion[s.label][p] += 1;
            correct += (p == s.label) as usize;
            predictions.push(p);
        }
    }
    let total = samples.len();
    Ok(WholeEval {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        confusion,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub start: usize,
    pub probs: Vec<f64>,
    pub argmax: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingResult {
    pub label: usize,
    pub mean_probs: Vec<f64>,
    pub windows: Vec<WindowScore>,
}

/// Scores every stride-1 window of `text` and averages the softmax outputs.
pub fn evaluate_sliding(model: &ClcnnModel, table: &EmbeddingTable, charset: &Charset, text: &str) -> Result<SlidingResult> {
    if !table.matches(charset) {
        return Err(Error::Data("embedding table was built for a different charset".into()));
    }
    if text.is_empty() {
        return Err(Error::Data("cannot classify empty text".into()));
    }
    let c = model.arch.c;
    // slide_all never draws from the rng
    let windows = crop_windows(text, charset, c, CropMode::SlideAll, &mut StepRng::new(0, 0));
    let k = model.arch.classes;
    let mut scores = Vec::with_capacity(windows.len());
    for (ci, chunk) in windows.chunks(EVAL_BATCH).enumerate() {
        let seqs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
        let batch = crate::augment::EmbeddedBatch::from_indices(table, &seqs)?;
        for (j, probs) in predict_probs(model, &batch.to_channels_first())?.into_iter().enumerate() {
            scores.push(WindowScore {
                start: ci * EVAL_BATCH + j,
                argmax: argmax(&probs),
                probs,
            });
        }
    }
    let mut mean_probs = vec![0.0; k];
    for w in &scores {
        for (m, p) in mean_probs.iter_mut().zip(&w.probs) {
            *m += p;
        }
    }
    for m in &mut mean_probs {
        *m /= scores.len() as f64;
    }
    Ok(SlidingResult {
        label: argmax(&mean_probs),
        mean_probs,
        windows: scores,
    })
}

/// Sidecar metadata stored next to classifier weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClcnnMeta {
    pub arch: ClcnnArch,
    pub categories: Vec<String>,
    pub augmentation: Augmentation,
    pub table_hash: String,
    pub seed: u64,
}

pub fn save_classifier(path: &Path, model: &ClcnnModel, meta: &ClcnnMeta) -> Result<()> {
    if meta.arch != model.arch {
        return Err(Error::Config("classifier metadata does not match the model architecture".into()));
    }
    save_weights(path, &model.params, meta)
}

pub fn load_classifier(path: &Path) -> Result<(ClcnnModel, ClcnnMeta)> {
    let (params, meta): (_, ClcnnMeta) = load_weights(path)?;
    if meta.categories.len() != meta.arch.classes {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!("{} categories for {} classes", meta.categories.len(), meta.arch.classes),
        });
    }
    let model = ClcnnModel::from_params(&meta.arch, params)?;
    Ok((model, meta))
}
