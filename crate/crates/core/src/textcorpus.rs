//! The livedoor news corpus: loading, fixed-length index encoding, window
//! cropping and stratified, replayable splits.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphset::{Charset, PAD};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    /// `category/file name`, stable across machines.
    pub id: String,
    pub category: String,
    pub label: usize,
    pub title: String,
    pub body: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    /// Category names in label order (sorted directory names).
    pub categories: Vec<String>,
    pub docs: Vec<Document>,
    /// Files skipped as malformed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    /// Documents per category, in label order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        let mut n = vec![0; self.categories.len()];
        for d in &self.docs {
            n[d.label] += 1;
        }
        self.categories.iter().cloned().zip(n).collect()
    }

    pub fn count_of(&self, category: &str) -> usize {
        self.docs.iter().filter(|d| d.category == category).count()
    }

    /// Human-readable loading report.
    pub fn report(&self) -> String {
        let mut s = format!("{} documents in {} categories\n", self.len(), self.num_classes());
        for (c, n) in self.counts() {
            s.push_str(&format!("  {c:<16} {n}\n"));
        }
        if !self.skipped.is_empty() {
            s.push_str(&format!("  skipped {} malformed files\n", self.skipped.len()));
        }
        s
    }
}

fn is_license(name: &str) -> bool {
    name.to_ascii_uppercase().starts_with("LICENSE")
}

/// Reads `root/<category>/*.txt`. Line 1 is the URL, line 2 the timestamp,
/// line 3 the title and the rest the body.
pub fn load_livedoor(root: &Path) -> Result<Corpus> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                dirs.push((name.to_string(), path));
            }
        }
    }
    dirs.sort();

    let mut corpus = Corpus::default();
    for (category, dir) in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension().is_some_and(|x| x == "txt")
                    && !p.file_name().and_then(|n| n.to_str()).is_some_and(is_license)
            })
            .collect();
        if files.is_empty() {
            continue;
        }
        files.sort();
        let label = corpus.categories.len();
        corpus.categories.push(category.clone());
        for path in files {
            let text = match fs::read(&path) {
                Ok(bytes) => match String::from_utf8(bytes) {
                    Ok(t) => t,
                    Err(_) => {
                        log::warn!("skipping {}: not valid UTF-8", path.display());
                        corpus.skipped.push((path, "not valid UTF-8".into()));
                        continue;
                    }
                },
                Err(e) => return Err(Error::io(&path, e)),
            };
            let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
            let lines: Vec<&str> = text.lines().collect();
            if lines.len() < 3 || lines[2].trim().is_empty() {
                log::warn!("skipping {}: fewer than 3 lines or empty title", path.display());
                corpus.skipped.push((path, "fewer than 3 lines or empty title".into()));
                continue;
            }
            let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            corpus.docs.push(Document {
                id: format!("{category}/{file_name}"),
                category: category.clone(),
                label,
                title: lines[2].trim_end_matches('\r').to_string(),
                body: lines[3..].join("\n"),
                path,
            });
        }
    }
    if corpus.docs.is_empty() {
        return Err(Error::Data(format!("no documents found under {}", root.display())));
    }
    Ok(corpus)
}

/// A fixed-length index sequence with its class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub indices: Vec<u32>,
    pub label: usize,
}

/// First `c` characters as charset indices (unknown → geta), padded with [`PAD`].
pub fn encode_text(text: &str, charset: &Charset, c: usize) -> Vec<u32> {
    let mut out: Vec<u32> = text.chars().take(c).map(|ch| charset.encode_char(ch)).collect();
    out.resize(c, PAD);
    out
}

pub fn encode_title(doc: &Document, charset: &Charset, c: usize) -> EncodedSample {
    EncodedSample {
        indices: encode_text(&doc.title, charset, c),
        label: doc.label,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    RandomCrop,
    SlideAll,
}

/// Length-`c` windows over `text`: one uniformly placed window, or every
/// stride-1 window. Text shorter than `c` yields a single padded window.
pub fn crop_windows<R: Rng + ?Sized>(text: &str, charset: &Charset, c: usize, mode: CropMode, rng: &mut R) -> Vec<Vec<u32>> {
    let idx: Vec<u32> = text.chars().map(|ch| charset.encode_char(ch)).collect();
    if idx.len() <= c {
        let mut w = idx;
        w.resize(c, PAD);
        return vec![w];
    }
    let count = idx.len() - c + 1;
    match mode {
        CropMode::RandomCrop => {
            let s = rng.gen_range(0..count);
            vec![idx[s..s + c].to_vec()]
        }
        CropMode::SlideAll => idx.windows(c).map(<[u32]>::to_vec).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: f64,
    pub val: f64,
    pub eval: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { seed: 0, train: 0.72, val: 0.08, eval: 0.20 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.eval];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {}/{}/{}",
                self.train, self.val, self.eval
            )));
        }
        Ok(())
    }
}

/// Document positions (into `Corpus::docs`) for each split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Minimum documents per category for a stratified split.
pub const MIN_PER_CATEGORY: usize = 5;

/// Stratified split: per category, `round(eval·n)` evaluation and
/// `round(val·n)` validation documents; the rest train.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("cannot split an empty corpus".into()));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); corpus.num_classes()];
    for (i, d) in corpus.docs.iter().enumerate() {
        by_label[d.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Splits::default();
    for (label, mut members) in by_label.into_iter().enumerate() {
        let n = members.len();
        if n < MIN_PER_CATEGORY {
            return Err(Error::Data(format!(
                "category `{}` has {n} documents; at least {MIN_PER_CATEGORY} are needed to stratify",
                corpus.categories[label]
            )));
        }
        members.shuffle(&mut rng);
        let n_eval = (spec.eval * n as f64).round() as usize;
        let n_val = ((spec.val * n as f64).round() as usize).min(n - n_eval);
        out.eval.extend_from_slice(&members[..n_eval]);
        out.val.extend_from_slice(&members[n_eval..n_eval + n_val]);
        out.train.extend_from_slice(&members[n_eval + n_val..]);
    }
    for v in [&mut out.train, &mut out.val, &mut out.eval] {
        v.sort_unstable();
    }
    Ok(out)
}

/// JSON record of a split, replayable against the same corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub categories: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub eval: Vec<String>,
}

impl SplitManifest {
    pub fn new(corpus: &Corpus, spec: &SplitSpec, splits: &Splits) -> Self {
        let ids = |v: &[usize]| v.iter().map(|&i| corpus.docs[i].id.clone()).collect();
        SplitManifest {
            spec: spec.clone(),
            categories: corpus.categories.clone(),
            counts: corpus.counts().into_iter().collect(),
            train: ids(&splits.train),
            val: ids(&splits.val),
            eval: ids(&splits.eval),
        }
    }

    /// Maps the recorded document ids back to positions in `corpus`.
    pub fn resolve(&self, corpus: &Corpus) -> Result<Splits> {
        if self.categories != corpus.categories {
            return Err(Error::Data(format!(
                "manifest categories {:?} do not match corpus categories {:?}",
                self.categories, corpus.categories
            )));
        }
        let index: HashMap<&str, usize> = corpus.docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let look = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Data(format!("manifest document `{id}` not found in corpus")))
                })
                .collect()
        };
        Ok(Splits {
            train: look(&self.train)?,
            val: look(&self.val)?,
            eval: look(&self.eval)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphset::GETA;

    fn charset() -> Charset {
        Charset::from_chars("abcdefghij".chars().chain([GETA])).unwrap()
    }

    #[test]
    fn encode_pads_and_truncates() {
        let cs = charset();
        let e = encode_text("abc", &cs, 5);
        assert_eq!(&e[3..], &[PAD, PAD]);
        assert_eq!(encode_text("abcdefghij", &cs, 4).len(), 4);
        assert_eq!(encode_text("a😀", &cs, 3)[1], cs.unknown_index());
    }

    #[test]
    fn split_spec_validation() {
        assert!(SplitSpec::default().validate().is_ok());
        let bad = SplitSpec { train: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
