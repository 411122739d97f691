use std::path::Path;

use gel_core::clcnn::{load_classifier, ClcnnMeta, ClcnnModel};
use gel_core::glyphset::Charset;
use gel_core::vce::{load_vce, EmbeddingTable, VceModel};

use crate::error::StartupError;

/// Per-dimension KL (nats) above which a latent dimension counts as active.
pub const ACTIVE_KL: f64 = 0.1;

pub struct Classifier {
    pub model: ClcnnModel,
    pub meta: ClcnnMeta,
}

/// Everything the handlers read. Built once at startup and never mutated.
pub struct ServiceState {
    pub model: VceModel,
    pub table: EmbeddingTable,
    pub charset: Charset,
    pub active_dims: Vec<usize>,
    pub classifier: Option<Classifier>,
    /// Row-major `[len, d]` copy of the table means for neighbor scans.
    mu: Vec<f32>,
}

impl ServiceState {
    pub fn new(
        model: VceModel,
        table: EmbeddingTable,
        classifier: Option<(ClcnnModel, ClcnnMeta)>,
    ) -> Result<Self, StartupError> {
        if table.latent_dim() != model.latent_dim() {
            return Err(StartupError::Mismatch(format!(
                "embedding table has d={} but the encoder has d={}",
                table.latent_dim(),
                model.latent_dim()
            )));
        }
        let charset = Charset::from_chars(table.entries().iter().map(|e| e.codepoint))?;
        let in_order = charset.entries().iter().eq(table.entries().iter().map(|e| &e.codepoint));
        if !in_order || !table.matches(&charset) {
            return Err(StartupError::Mismatch(
                "embedding table entries do not hash to its recorded charset hash".into(),
            ));
        }
        let classifier = match classifier {
            None => None,
            Some((model, meta)) => {
                if meta.table_hash != table.charset_hash_hex() {
                    return Err(StartupError::Mismatch(format!(
                        "classifier was trained on table {} but the loaded table is {}",
                        meta.table_hash,
                        table.charset_hash_hex()
                    )));
                }
                if meta.arch.d != table.latent_dim() {
                    return Err(StartupError::Mismatch(format!(
                        "classifier expects d={} but the table has d={}",
                        meta.arch.d,
                        table.latent_dim()
                    )));
                }
                Some(Classifier { model, meta })
            }
        };
        let mu = table.entries().iter().flat_map(|e| e.mu.iter().copied()).collect();
        Ok(ServiceState {
            active_dims: table.active_dims(ACTIVE_KL),
            model,
            table,
            charset,
            classifier,
            mu,
        })
    }

    /// Loads encoder weights, the embedding table and optionally a classifier,
    /// refusing mismatched artifacts.
    pub fn load(weights: &Path, table: &Path, classifier: Option<&Path>) -> Result<Self, StartupError> {
        let (model, meta) = load_vce(weights)?;
        let table = EmbeddingTable::load(table)?;
        if meta.charset_hash != table.charset_hash_hex() {
            return Err(StartupError::Mismatch(format!(
                "encoder was trained on charset {} but the table is for {}",
                meta.charset_hash,
                table.charset_hash_hex()
            )));
        }
        let clf = classifier.map(load_classifier).transpose()?;
        Self::new(model, table, clf)
    }

    pub fn latent_dim(&self) -> usize {
        self.table.latent_dim()
    }

    /// `k` nearest table entries to `z` by Euclidean distance, closest first;
    /// ties go to the earlier charset entry.
    pub fn neighbors(&self, z: &[f32], k: usize) -> Vec<(usize, f64)> {
        let d = self.latent_dim();
        let mut all: Vec<(usize, f64)> = self
            .mu
            .chunks(d)
            .enumerate()
            .map(|(i, row)| {
                let sq: f64 = row.iter().zip(z).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                (i, sq)
            })
            .collect();
        let k = k.min(all.len());
        if k == 0 {
            return Vec::new();
        }
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        all.into_iter().map(|(i, sq)| (i, sq.sqrt())).collect()
    }
}
