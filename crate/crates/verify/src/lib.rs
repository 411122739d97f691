//! Shared fixtures for the acceptance run and the pilot that calibrates it.

use gel_core::glyphset::{find_font, rasterize, read_font, Charset, GlyphDataset, RenderConfig};
use gel_core::vce::{VceConfig, VceModel, PROB_EPS};
use gel_core::Tensor;

/// Characters in the desk-scale training subset.
pub const DESK_SUBSET: usize = 200;
pub const DESK_STEPS: usize = 5000;
pub const DESK_BETA: f64 = 8.0;
/// Wall-clock budget for the desk-scale run, in seconds.
pub const DESK_BUDGET_S: f64 = 15.0 * 60.0;

/// Mean per-pixel reconstruction BCE of the pilot run (seed 1), plus 10%.
/// Re-derive with `cargo test -p gel-verify --test pilot -- --ignored --nocapture`.
pub const BCE_THRESHOLD: f64 = 0.09362 * 1.1;

/// Steps per run in the beta sweep: enough for the KL ordering to settle.
pub const BETA_STEPS: usize = 1000;

/// Per-dimension KL above which a dimension counts as active (nats).
pub const ACTIVE_KL: f64 = 0.1;

pub fn desk_config(seed: u64) -> VceConfig {
    VceConfig {
        beta: DESK_BETA,
        steps: DESK_STEPS,
        seed,
        ..VceConfig::default()
    }
}

/// Rasterizes an evenly strided subset of the default charset with the installed font.
pub fn font_subset(n: usize) -> Result<GlyphDataset, String> {
    font_dataset(Some(n))
}

/// Rasterizes the default charset, or a strided subset of `n` characters.
pub fn font_dataset(n: Option<usize>) -> Result<GlyphDataset, String> {
    let font = find_font().ok_or("no Japanese font found (set GEL_FONT)")?;
    let (bytes, id) = read_font(&font).map_err(|e| e.to_string())?;
    let mut cs = Charset::build_default();
    if let Some(n) = n {
        cs = cs.subset(n).map_err(|e| e.to_string())?;
    }
    let (ds, _) = rasterize(&cs, &bytes, &id, &RenderConfig::default()).map_err(|e| e.to_string())?;
    Ok(ds)
}

/// Mean per-pixel binary cross-entropy between each glyph and the decoding
/// of its posterior mean, with probabilities clamped as in training.
pub fn recon_bce(model: &VceModel, ds: &GlyphDataset) -> gel_core::Result<f64> {
    let codes = model.encode_all(&ds.images, 64)?;
    let d = model.latent_dim();
    let z: Vec<f32> = codes.iter().flat_map(|c| c.mu.iter().copied()).collect();
    let out = model.decode_batch(&Tensor::from_vec(&[codes.len(), d], z))?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (img, probs) in ds.images.iter().zip(out.data().chunks(model.image_pixels())) {
        for (&lvl, &p) in img.levels().iter().zip(probs) {
            let x = lvl as f64 / 255.0;
            let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            sum -= x * p.ln() + (1.0 - x) * (1.0 - p).ln();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}
