use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gel_core::augment::{Augmentation, SsaConfig};
use gel_core::clcnn::{
    evaluate_sliding, evaluate_whole, load_classifier, save_classifier, train_classifier, ClcnnConfig, ClcnnMeta,
    History,
};
use gel_core::glyphset::{
    find_font, load_dataset, rasterize, read_font, save_dataset, Charset, DatasetMeta, GlyphDataset, FONT_ENV,
    IMAGE_SIDE,
};
use gel_core::textcorpus::{encode_title, load_livedoor, split, Corpus, EncodedSample, SplitManifest, Splits};
use gel_core::vce::{
    export_embeddings, load_vce, save_vce, train_cae, train_vce, traverse, EmbeddingTable, VceMeta, VceModel,
};
use gel_core::Error;
use gel_service::image::grid;
use gel_service::{ServiceState, ACTIVE_KL};
use serde::Serialize;

use crate::cli::*;
use crate::config::{ensure_parent, or_data, parent_dir, RunConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn subset_of(ds: GlyphDataset, n: Option<usize>) -> Result<GlyphDataset> {
    match n {
        None => Ok(ds),
        Some(n) if n == ds.len() => Ok(ds),
        Some(n) => Ok(ds.restrict(&ds.charset.subset(n)?)?),
    }
}

pub fn table_charset(table: &EmbeddingTable) -> Result<Charset> {
    Ok(Charset::from_chars(table.entries().iter().map(|e| e.codepoint))?)
}

pub fn render(cfg: &RunConfig, args: &RenderArgs) -> Result<()> {
    let font = match &args.font {
        Some(p) => p.clone(),
        None => find_font().ok_or_else(|| {
            Error::Font(format!("no Japanese font found; pass --font or set {FONT_ENV}"))
        })?,
    };
    let (bytes, font_id) = read_font(&font)?;
    let full = Charset::build_default();
    let charset = match cfg.glyphset.subset {
        Some(n) => full.subset(n)?,
        None => full,
    };
    log::info!("rasterizing {} characters with {font_id}", charset.len());
    let (ds, missing) = rasterize(&charset, &bytes, &font_id, &cfg.glyphset.render)?;
    let out = or_data(args.out.clone(), "glyphs.gly1");
    ensure_parent(&out)?;
    let meta = DatasetMeta {
        font_id,
        count: ds.len(),
        charset_hash: ds.charset.hash_hex(),
        fallback_codepoints: missing.iter().map(|&c| c as u32).collect(),
        render: Some(cfg.glyphset.render.clone()),
    };
    save_dataset(&ds, &out, &meta)?;
    cfg.snapshot(&parent_dir(&out), "render")?;
    println!("wrote {} glyphs to {} ({} drawn with the fallback glyph)", ds.len(), out.display(), missing.len());
    Ok(())
}

/// Trains and saves one encoder; returns the output directory's weights path.
fn train_encoder(cfg: &RunConfig, ds: &GlyphDataset, out: &Path, deterministic: bool) -> Result<(VceModel, PathBuf)> {
    let (model, log) = if deterministic { train_cae(ds, &cfg.vce)? } else { train_vce(ds, &cfg.vce)? };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let weights = out.join("weights.wts");
    let meta = VceMeta {
        arch: model.arch().clone(),
        beta: if deterministic { 0.0 } else { cfg.vce.beta },
        seed: cfg.vce.seed,
        steps: cfg.vce.steps,
        best_step: log.best_step,
        charset_hash: ds.charset.hash_hex(),
        font_id: ds.font_id.clone(),
    };
    save_vce(&weights, &model, &meta)?;
    log.write_csv(&out.join("log.csv"))?;
    if let Some(last) = log.last() {
        println!(
            "step {}: objective {:.3} (log-likelihood {:.3}{}); best interval ends at step {}",
            last.step,
            last.total,
            last.recon,
            last.kl.map(|k| format!(", KL {k:.3}")).unwrap_or_default(),
            log.best_step
        );
    }
    Ok((model, weights))
}

pub fn train_vce_cmd(cfg: &RunConfig, args: &TrainVceArgs, deterministic: bool) -> Result<()> {
    let gly = or_data(args.gly.clone(), "glyphs.gly1");
    let ds = subset_of(load_dataset(&gly)?, cfg.glyphset.subset)?;
    let out = or_data(args.out.clone(), if deterministic { "cae" } else { "vce" });
    log::info!("training on {} glyphs for {} steps", ds.len(), cfg.vce.steps);
    let (_, weights) = train_encoder(cfg, &ds, &out, deterministic)?;
    cfg.snapshot(&out, if deterministic { "train-cae" } else { "train-vce" })?;
    println!("wrote {}", weights.display());
    Ok(())
}

#[derive(Serialize)]
struct EmbStats {
    characters: usize,
    latent_dim: usize,
    mean_total_kl: f64,
    active_threshold: f64,
    active_dims: Vec<usize>,
    dims: Vec<gel_core::vce::DimStats>,
}

fn export(model: &VceModel, ds: &GlyphDataset, out: &Path) -> Result<EmbeddingTable> {
    let table = export_embeddings(model, ds)?;
    ensure_parent(out)?;
    table.save(out)?;
    let stats = EmbStats {
        characters: table.len(),
        latent_dim: table.latent_dim(),
        mean_total_kl: table.mean_total_kl(),
        active_threshold: ACTIVE_KL,
        active_dims: table.active_dims(ACTIVE_KL),
        dims: table.dim_stats(),
    };
    write_json(&out.with_extension("stats.json"), &stats)?;
    Ok(table)
}

pub fn export_emb(cfg: &RunConfig, args: &ExportArgs) -> Result<()> {
    let weights = or_data(args.weights.clone(), "vce/weights.wts");
    let (model, meta) = load_vce(&weights)?;
    let gly = or_data(args.gly.clone(), "glyphs.gly1");
    let ds = subset_of(load_dataset(&gly)?, cfg.glyphset.subset)?;
    if ds.charset.hash_hex() != meta.charset_hash {
        return Err(Error::Data(format!(
            "{} was trained on charset {} but {} gives {} ({} characters); use the same --subset as training",
            weights.display(),
            meta.charset_hash,
            gly.display(),
            ds.charset.hash_hex(),
            ds.len()
        ))
        .into());
    }
    let out = or_data(args.out.clone(), "emb.emb1");
    let table = export(&model, &ds, &out)?;
    cfg.snapshot(&parent_dir(&out), "export-emb")?;
    let active = table.active_dims(ACTIVE_KL);
    println!(
        "wrote {} embeddings to {}; mean total KL {:.3}; active dims {:?}",
        table.len(),
        out.display(),
        table.mean_total_kl(),
        active
    );
    Ok(())
}

fn parse_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    if let (Some(c), None) = (it.next(), it.next()) {
        return Ok(c);
    }
    s.strip_prefix("U+")
        .and_then(|h| u32::from_str_radix(h, 16).ok())
        .and_then(char::from_u32)
        .ok_or_else(|| Error::Config(format!("expected one character or U+XXXX, got {s:?}")).into())
}

pub fn traverse_cmd(_cfg: &RunConfig, args: &TraverseArgs) -> Result<()> {
    let (model, _) = load_vce(&or_data(args.weights.clone(), "vce/weights.wts"))?;
    let table = EmbeddingTable::load(&or_data(args.table.clone(), "emb.emb1"))?;
    let ch = parse_char(&args.char)?;
    let dims: Vec<usize> = if args.all_dims { (0..model.latent_dim()).collect() } else { vec![args.dim] };
    let mut tiles = Vec::new();
    for &dim in &dims {
        tiles.extend(traverse(&model, &table, ch, dim, -args.range, args.range, args.steps)?);
    }
    let (png, w, h) = grid(&tiles, IMAGE_SIDE, args.steps);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| or_data(None, &format!("traverse-U+{:04X}.png", ch as u32)));
    write_bytes(&out, &png)?;
    println!("wrote {w}x{h} traversal of {ch:?} to {}", out.display());
    Ok(())
}

/// Corpus, its splits and title encodings for one charset.
pub struct Prepared {
    pub corpus: Corpus,
    pub manifest: SplitManifest,
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub eval: Vec<EncodedSample>,
}

pub fn prepare(cfg: &RunConfig, corpus_root: &Path, manifest: Option<&Path>, charset: &Charset) -> Result<Prepared> {
    let corpus = load_livedoor(corpus_root)?;
    log::info!("{}", corpus.report().trim_end());
    let (splits, manifest) = match manifest {
        Some(p) => {
            let m = SplitManifest::load(p)?;
            (m.resolve(&corpus)?, m)
        }
        None => {
            let s: Splits = split(&corpus, &cfg.corpus.split)?;
            let m = SplitManifest::new(&corpus, &cfg.corpus.split, &s);
            (s, m)
        }
    };
    let c = cfg.clcnn.c;
    let enc = |ids: &[usize]| ids.iter().map(|&i| encode_title(&corpus.docs[i], charset, c)).collect::<Vec<_>>();
    Ok(Prepared {
        train: enc(&splits.train),
        val: enc(&splits.val),
        eval: enc(&splits.eval),
        manifest,
        corpus,
    })
}

#[derive(Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_accuracy: f64,
    pub eval_accuracy: f64,
}

#[derive(Serialize)]
pub struct ClfReport {
    pub augmentation: String,
    pub window: usize,
    pub categories: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub eval: usize,
    pub seeds: Vec<SeedResult>,
    pub mean_eval_accuracy: f64,
}

/// Trains one classifier per seed and evaluates each on the held-out split.
pub fn run_seeds(
    table: &EmbeddingTable,
    data: &Prepared,
    clcnn: &ClcnnConfig,
    seeds: usize,
    out: Option<&Path>,
) -> Result<ClfReport> {
    let classes = data.corpus.num_classes();
    let mut results = Vec::new();
    for i in 0..seeds as u64 {
        let cfg = ClcnnConfig { seed: clcnn.seed + i, ..clcnn.clone() };
        log::info!("seed {}: training with {}", cfg.seed, cfg.augmentation.label());
        let (model, history): (_, History) = train_classifier(table, &data.train, &data.val, classes, &cfg)?;
        let eval = evaluate_whole(&model, table, &data.eval)?;
        if let Some(out) = out {
            let dir = out.join(format!("seed-{}", cfg.seed));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let meta = ClcnnMeta {
                arch: model.arch.clone(),
                categories: data.corpus.categories.clone(),
                augmentation: cfg.augmentation.clone(),
                table_hash: table.charset_hash_hex(),
                seed: cfg.seed,
            };
            save_classifier(&dir.join("model.wts"), &model, &meta)?;
            write_json(&dir.join("history.json"), &history)?;
            write_json(&dir.join("eval.json"), &eval)?;
        }
        println!(
            "seed {}: eval accuracy {:.4} (val {:.4} at epoch {})",
            cfg.seed, eval.accuracy, history.best_val_acc, history.best_epoch
        );
        results.push(SeedResult {
            seed: cfg.seed,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            val_accuracy: history.best_val_acc,
            eval_accuracy: eval.accuracy,
        });
    }
    let mean = results.iter().map(|r| r.eval_accuracy).sum::<f64>() / results.len().max(1) as f64;
    Ok(ClfReport {
        augmentation: clcnn.augmentation.label(),
        window: clcnn.c,
        categories: data.corpus.categories.clone(),
        train: data.train.len(),
        val: data.val.len(),
        eval: data.eval.len(),
        seeds: results,
        mean_eval_accuracy: mean,
    })
}

pub fn train_clf(cfg: &RunConfig, args: &TrainClfArgs) -> Result<()> {
    let table = EmbeddingTable::load(&or_data(args.table.clone(), "emb.emb1"))?;
    let charset = table_charset(&table)?;
    let data = prepare(cfg, &cfg.corpus_root()?, args.manifest.as_deref(), &charset)?;
    let out = or_data(args.out.clone(), "clf");
    cfg.snapshot(&out, "train-clf")?;
    data.manifest.save(&out.join("manifest.json"))?;
    let report = run_seeds(&table, &data, &cfg.clcnn_resolved(), args.seeds, Some(&out))?;
    write_json(&out.join("report.json"), &report)?;
    println!("mean eval accuracy over {} seed(s): {:.4}", report.seeds.len(), report.mean_eval_accuracy);
    Ok(())
}

#[derive(Serialize)]
struct SlidingReport {
    label: usize,
    category: String,
    probs: Vec<f64>,
    windows: usize,
}

pub fn eval_cmd(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let clf_path = or_data(args.clf.clone(), "clf/seed-0/model.wts");
    let (model, meta) = load_classifier(&clf_path)?;
    let table = EmbeddingTable::load(&or_data(args.table.clone(), "emb.emb1"))?;
    if meta.table_hash != table.charset_hash_hex() {
        return Err(Error::Data(format!(
            "{} was trained with embedding table {} but the given table is {}",
            clf_path.display(),
            meta.table_hash,
            table.charset_hash_hex()
        ))
        .into());
    }
    let charset = table_charset(&table)?;
    if let Some(doc) = &args.document {
        let text = fs::read_to_string(doc).map_err(|e| Error::io(doc, e))?;
        let r = evaluate_sliding(&model, &table, &charset, text.trim())?;
        let report = SlidingReport {
            label: r.label,
            category: meta.categories[r.label].clone(),
            probs: r.mean_probs,
            windows: r.windows.len(),
        };
        println!("{} ({} windows)", report.category, report.windows);
        if let Some(p) = &args.report {
            write_json(p, &report)?;
        }
        return Ok(());
    }
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| parent_dir(&parent_dir(&clf_path)).join("manifest.json"));
    let cfg = RunConfig {
        clcnn: ClcnnConfig { c: meta.arch.c, ..cfg.clcnn.clone() },
        ..cfg.clone()
    };
    let data = prepare(&cfg, &cfg.corpus_root()?, Some(&manifest), &charset)?;
    if data.corpus.categories != meta.categories {
        return Err(Error::Data("corpus categories differ from the classifier's".into()).into());
    }
    let eval = evaluate_whole(&model, &table, &data.eval)?;
    let mut s = format!("accuracy {:.4} ({}/{})\nconfusion (rows true, columns predicted):\n", eval.accuracy, eval.correct, eval.total);
    for (name, row) in meta.categories.iter().zip(&eval.confusion) {
        let _ = writeln!(s, "  {name:<16} {}", row.iter().map(|v| format!("{v:5}")).collect::<String>());
    }
    print!("{s}");
    if let Some(p) = &args.report {
        write_json(p, &eval)?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    let values: Vec<f64> = args.values.clone();
    if values.is_empty() {
        return Err(Error::Config("--values needs at least one value".into()).into());
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| or_data(None, &format!("sweep-{}.csv", args.axis.name())));
    let work = parent_dir(&out).join(format!("sweep-{}", args.axis.name()));
    cfg.snapshot(&work, "sweep")?;
    let root = cfg.corpus_root()?;
    let mut csv = format!("{},seed,accuracy,mean\n", args.axis.name());
    match args.axis {
        SweepAxis::Gamma => {
            let table = EmbeddingTable::load(&or_data(args.table.clone(), "emb.emb1"))?;
            let data = prepare(cfg, &root, args.manifest.as_deref(), &table_charset(&table)?)?;
            for &g in &values {
                let clcnn = ClcnnConfig {
                    augmentation: Augmentation::Ssa(SsaConfig { gamma: g, ..cfg.augment.ssa.clone() }),
                    ..cfg.clcnn.clone()
                };
                let report = run_seeds(&table, &data, &clcnn, args.seeds, None)?;
                push_rows(&mut csv, g, &report);
            }
        }
        SweepAxis::Beta => {
            let gly = or_data(args.gly.clone(), "glyphs.gly1");
            let ds = subset_of(load_dataset(&gly)?, cfg.glyphset.subset)?;
            let mut data = None;
            for &b in &values {
                let run = RunConfig {
                    vce: gel_core::vce::VceConfig { beta: b, ..cfg.vce.clone() },
                    ..cfg.clone()
                };
                let dir = work.join(format!("beta-{b}"));
                let (model, _) = train_encoder(&run, &ds, &dir, false)?;
                let table = export(&model, &ds, &dir.join("emb.emb1"))?;
                if data.is_none() {
                    data = Some(prepare(cfg, &root, args.manifest.as_deref(), &table_charset(&table)?)?);
                }
                let clcnn = ClcnnConfig { augmentation: Augmentation::None, ..cfg.clcnn.clone() };
                let report = run_seeds(&table, data.as_ref().expect("set above"), &clcnn, args.seeds, None)?;
                push_rows(&mut csv, b, &report);
            }
        }
    }
    write_bytes(&out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn push_rows(csv: &mut String, value: f64, report: &ClfReport) {
    for r in &report.seeds {
        let _ = writeln!(csv, "{value},{},{:.6},{:.6}", r.seed, r.eval_accuracy, report.mean_eval_accuracy);
    }
}

pub fn serve(cfg: &RunConfig, args: &ServeArgs) -> Result<()> {
    let weights = or_data(args.weights.clone(), "vce/weights.wts");
    let table = or_data(args.table.clone(), "emb.emb1");
    let state = ServiceState::load(&weights, &table, args.clf.as_deref())?;
    let addr: SocketAddr = format!("{}:{}", cfg.service.host, cfg.service.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad service address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(gel_service::serve(state, addr, cfg.service.static_dir.as_deref()))?;
    Ok(())
}
