use super::embedding::EmbeddingTable;
use super::model::VceModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `steps` evenly spaced values in `[lo, hi]` (the midpoint when `steps == 1`).
pub fn traversal_offsets(lo: f32, hi: f32, steps: usize) -> Vec<f32> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f32 / (steps - 1) as f32)
            .collect(),
    }
}

/// Decode `mu(ch)` with dimension `dim` shifted by each offset in `[lo, hi]`.
pub fn traverse(
    model: &VceModel,
    table: &EmbeddingTable,
    ch: char,
    dim: usize,
    lo: f32,
    hi: f32,
    steps: usize,
) -> Result<Vec<Vec<f32>>> {
    let entry = table.lookup(ch).ok_or_else(|| table.unknown_char_error(ch))?;
    let d = model.latent_dim();
    if dim >= d {
        return Err(Error::Config(format!("dimension {dim} out of range 0..{d}")));
    }
    if steps == 0 || !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config("traversal needs at least one step and a finite range".into()));
    }
    let offsets = traversal_offsets(lo, hi, steps);
    let mut z = Vec::with_capacity(steps * d);
    for off in &offsets {
        let mut row = entry.mu.clone();
        row[dim] += off;
        z.extend(row);
    }
    let out = model.decode_batch(&Tensor::from_vec(&[steps, d], z))?;
    let pixels = model.image_pixels();
    Ok(out.data().chunks(pixels).map(<[f32]>::to_vec).collect())
}
