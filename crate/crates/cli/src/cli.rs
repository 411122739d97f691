use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{AugKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "gel", version, about = "Glyph-aware character embeddings: render, train, export, classify, explore")]
pub struct Cli {
    /// JSON run config; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rasterize the charset into a GLY1 image file.
    Render(RenderArgs),
    /// Train the variational character encoder.
    TrainVce(TrainVceArgs),
    /// Train the plain autoencoder baseline.
    TrainCae(TrainVceArgs),
    /// Encode every glyph and write the EMB1 embedding table.
    ExportEmb(ExportArgs),
    /// Decode a character while sweeping one latent dimension.
    Traverse(TraverseArgs),
    /// Train title classifiers over one or more seeds.
    TrainClf(TrainClfArgs),
    /// Evaluate a classifier on the held-out split, or classify one document.
    Eval(EvalArgs),
    /// Classifier accuracy across values of beta or gamma.
    Sweep(SweepArgs),
    /// Run the HTTP explorer service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// TrueType/OpenType font; searched for when omitted.
    #[arg(long)]
    pub font: Option<PathBuf>,
    /// Render an evenly strided subset of this many characters.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainVceArgs {
    #[arg(long)]
    pub gly: Option<PathBuf>,
    /// Output directory for weights, log and config snapshot.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub subset: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub gly: Option<PathBuf>,
    /// Must match the subset used for training.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraverseArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// A character or `U+XXXX`.
    #[arg(long = "char")]
    pub char: String,
    #[arg(long, default_value_t = 0)]
    pub dim: usize,
    /// One row per latent dimension.
    #[arg(long)]
    pub all_dims: bool,
    /// Offsets run over `[-range, range]`.
    #[arg(long, default_value_t = 2.0)]
    pub range: f32,
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainClfArgs {
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Extracted livedoor `text/` directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Replay the splits recorded in this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub aug: Option<AugKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Number of seeds, counting up from the configured seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Defaults to `manifest.json` two levels above the classifier.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Classify this text file with sliding windows instead.
    #[arg(long)]
    pub document: Option<PathBuf>,
    /// Write the result as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Beta,
    Gamma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Gamma => "gamma",
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Glyph images, for the beta axis.
    #[arg(long)]
    pub gly: Option<PathBuf>,
    /// Embedding table, for the gamma axis.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub vce_steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Serve the built explorer UI from this directory.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn set<T: Clone>(field: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *field = v.clone();
    }
}

/// Applies command-line overrides on top of the loaded config.
pub fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::Render(a) => {
            if a.subset.is_some() {
                cfg.glyphset.subset = a.subset;
            }
        }
        Command::TrainVce(a) | Command::TrainCae(a) => {
            set(&mut cfg.vce.beta, &a.beta);
            set(&mut cfg.vce.steps, &a.steps);
            set(&mut cfg.vce.seed, &a.seed);
            set(&mut cfg.vce.latent_dim, &a.latent_dim);
            if a.subset.is_some() {
                cfg.glyphset.subset = a.subset;
            }
        }
        Command::ExportEmb(a) => {
            if a.subset.is_some() {
                cfg.glyphset.subset = a.subset;
            }
        }
        Command::Traverse(_) => {}
        Command::TrainClf(a) => {
            set(&mut cfg.augment.kind, &a.aug);
            set(&mut cfg.augment.ssa.gamma, &a.gamma);
            set(&mut cfg.augment.wt.p_wt, &a.p);
            set(&mut cfg.clcnn.seed, &a.seed);
            set(&mut cfg.clcnn.max_epochs, &a.epochs);
            set(&mut cfg.clcnn.c, &a.window);
            set(&mut cfg.clcnn.channels, &a.channels);
            if a.corpus.is_some() {
                cfg.corpus.root = a.corpus.clone();
            }
        }
        Command::Eval(a) => {
            if a.corpus.is_some() {
                cfg.corpus.root = a.corpus.clone();
            }
        }
        Command::Sweep(a) => {
            set(&mut cfg.clcnn.max_epochs, &a.epochs);
            set(&mut cfg.vce.steps, &a.vce_steps);
            if a.corpus.is_some() {
                cfg.corpus.root = a.corpus.clone();
            }
        }
        Command::Serve(a) => {
            set(&mut cfg.service.port, &a.port);
            set(&mut cfg.service.host, &a.host);
            if a.static_dir.is_some() {
                cfg.service.static_dir = a.static_dir.clone();
            }
        }
    }
}
