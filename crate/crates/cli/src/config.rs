use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gel_core::augment::{Augmentation, SsaConfig, WtConfig};
use gel_core::clcnn::ClcnnConfig;
use gel_core::glyphset::RenderConfig;
use gel_core::textcorpus::SplitSpec;
use gel_core::vce::VceConfig;
use gel_core::Error;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "GEL_DATA_DIR";
pub const CORPUS_ENV: &str = "GEL_LIVEDOOR_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphsetSection {
    pub render: RenderConfig,
    /// Evenly strided subset of the default charset; `None` keeps all of it.
    pub subset: Option<usize>,
}

impl Default for GlyphsetSection {
    fn default() -> Self {
        GlyphsetSection { render: RenderConfig::default(), subset: None }
    }
}

/// Parameters for both augmentations; `kind` picks the one used for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub kind: AugKind,
    pub ssa: SsaConfig,
    pub wt: WtConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    None,
    Ssa,
    Wt,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            kind: AugKind::None,
            ssa: SsaConfig::new(2.0),
            wt: WtConfig::default(),
        }
    }
}

impl AugmentSection {
    pub fn resolve(&self) -> Augmentation {
        match self.kind {
            AugKind::None => Augmentation::None,
            AugKind::Ssa => Augmentation::Ssa(self.ssa.clone()),
            AugKind::Wt => Augmentation::Wt(self.wt.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Extracted livedoor `text/` directory.
    pub root: Option<PathBuf>,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSection {
    pub port: u16,
    pub host: String,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        ServiceSection {
            port: gel_service::DEFAULT_PORT,
            host: "127.0.0.1".into(),
            static_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub glyphset: GlyphsetSection,
    pub vce: VceConfig,
    pub augment: AugmentSection,
    pub corpus: CorpusSection,
    pub clcnn: ClcnnConfig,
    pub service: ServiceSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Checks every section; runs before any command does work.
    pub fn validate(&self) -> Result<()> {
        self.vce.validate()?;
        self.clcnn.validate()?;
        self.corpus.split.validate()?;
        self.augment.ssa.validate()?;
        self.augment.wt.validate()?;
        if self.clcnn.augmentation != Augmentation::None {
            return Err(Error::Config("set the augmentation in the `augment` section, not `clcnn.augmentation`".into()).into());
        }
        if !(self.glyphset.render.em_px > 0.0 && self.glyphset.render.em_px <= 64.0) {
            return Err(Error::Config(format!("glyphset.render.em_px must lie in (0, 64], got {}", self.glyphset.render.em_px)).into());
        }
        if !(0.0..=1.0).contains(&self.glyphset.render.min_coverage) {
            return Err(Error::Config("glyphset.render.min_coverage must lie in [0, 1]".into()).into());
        }
        Ok(())
    }

    /// Classifier settings with the chosen augmentation filled in.
    pub fn clcnn_resolved(&self) -> ClcnnConfig {
        ClcnnConfig {
            augmentation: self.augment.resolve(),
            ..self.clcnn.clone()
        }
    }

    pub fn corpus_root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.corpus.root {
            return Ok(r.clone());
        }
        match std::env::var_os(CORPUS_ENV) {
            Some(v) => Ok(PathBuf::from(v)),
            None => bail!(Error::Config(format!("no corpus given: pass --corpus, set corpus.root or {CORPUS_ENV}"))),
        }
    }

    /// Writes the resolved config next to a command's outputs.
    pub fn snapshot(&self, dir: &Path, command: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{command}.config.json"));
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Default artifact root: `$GEL_DATA_DIR`, else `./gel-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("gel-data"))
}

pub fn or_data(p: Option<PathBuf>, default: &str) -> PathBuf {
    p.unwrap_or_else(|| data_dir().join(default))
}

pub fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn ensure_parent(p: &Path) -> Result<()> {
    let d = parent_dir(p);
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))
}
