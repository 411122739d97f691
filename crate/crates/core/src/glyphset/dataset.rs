use std::fs;
use std::path::Path;

use fontdue::{Font, FontSettings};
use serde::{Deserialize, Serialize};

use super::charset::{Charset, GETA};
use crate::error::{Error, Result};
use crate::io::Reader;

pub const IMAGE_SIDE: usize = 64;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const GLY_MAGIC: &[u8; 4] = b"GLY1";
pub const GLY_VERSION: u16 = 1;

/// One rasterized character; ink = 1, background = 0, stored at 8 bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphImage {
    pub codepoint: char,
    levels: Vec<u8>,
}

impl GlyphImage {
    pub fn from_levels(codepoint: char, levels: Vec<u8>) -> Result<Self> {
        if levels.len() != IMAGE_PIXELS {
            return Err(Error::Data(format!(
                "glyph {codepoint:?} has {} pixels, expected {IMAGE_PIXELS}",
                levels.len()
            )));
        }
        Ok(GlyphImage { codepoint, levels })
    }

    /// Quantizes `[0, 1]` intensities to 8 bits.
    pub fn from_intensities(codepoint: char, pixels: &[f32]) -> Result<Self> {
        let levels = pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GlyphImage::from_levels(codepoint, levels)
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn pixel(&self, row: usize, col: usize) -> f32 {
        self.levels[row * IMAGE_SIDE + col] as f32 / 255.0
    }

    /// Row-major intensities in `[0, 1]`.
    pub fn intensities(&self) -> Vec<f32> {
        self.levels.iter().map(|&v| v as f32 / 255.0).collect()
    }

    pub fn max_intensity(&self) -> f32 {
        self.levels.iter().copied().max().unwrap_or(0) as f32 / 255.0
    }

    /// Inclusive `(top, left, bottom, right)` of pixels above `threshold`.
    pub fn ink_bbox(&self, threshold: f32) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                if self.pixel(r, c) > threshold {
                    bbox = Some(match bbox {
                        None => (r, c, r, c),
                        Some((t, l, b, rt)) => (t.min(r), l.min(c), b.max(r), rt.max(c)),
                    });
                }
            }
        }
        bbox
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Em size in pixels.
    pub em_px: f32,
    /// Minimum fraction of the charset the font must cover.
    pub min_coverage: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            em_px: 56.0,
            min_coverage: 0.99,
        }
    }
}

/// Images aligned with the charset order.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphDataset {
    pub charset: Charset,
    pub images: Vec<GlyphImage>,
    pub font_id: String,
}

/// Sidecar metadata written next to a GLY1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub font_id: String,
    pub count: usize,
    pub charset_hash: String,
    pub fallback_codepoints: Vec<u32>,
    pub render: Option<RenderConfig>,
}

impl GlyphDataset {
    pub fn new(charset: Charset, images: Vec<GlyphImage>, font_id: impl Into<String>) -> Result<Self> {
        if images.len() != charset.len() {
            return Err(Error::Data(format!(
                "{} images for {} charset entries",
                images.len(),
                charset.len()
            )));
        }
        for (img, &c) in images.iter().zip(charset.entries()) {
            if img.codepoint != c {
                return Err(Error::Data(format!(
                    "image for {:?} found where {c:?} expected",
                    img.codepoint
                )));
            }
        }
        Ok(GlyphDataset {
            charset,
            images,
            font_id: font_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, c: char) -> Option<&GlyphImage> {
        self.charset.index_of(c).map(|i| &self.images[i as usize])
    }

    /// Restrict to the characters of `subset`.
    pub fn restrict(&self, subset: &Charset) -> Result<GlyphDataset> {
        let images = subset
            .entries()
            .iter()
            .map(|&c| {
                self.image(c)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("{c:?} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        GlyphDataset::new(subset.clone(), images, self.font_id.clone())
    }
}

/// Render one glyph at `em_px`, centered by its bounding box in the 64×64 cell.
fn render_glyph(font: &Font, c: char, em_px: f32) -> Vec<u8> {
    let (m, bitmap) = font.rasterize(c, em_px);
    let mut cell = vec![0u8; IMAGE_PIXELS];
    if m.width == 0 || m.height == 0 {
        return cell;
    }
    // Offsets may be negative when the glyph exceeds the cell; those pixels are cropped.
    let off_x = (IMAGE_SIDE as isize - m.width as isize).div_euclid(2);
    let off_y = (IMAGE_SIDE as isize - m.height as isize).div_euclid(2);
    for gy in 0..m.height {
        let y = gy as isize + off_y;
        if !(0..IMAGE_SIDE as isize).contains(&y) {
            continue;
        }
        for gx in 0..m.width {
            let x = gx as isize + off_x;
            if (0..IMAGE_SIDE as isize).contains(&x) {
                cell[y as usize * IMAGE_SIDE + x as usize] = bitmap[gy * m.width + gx];
            }
        }
    }
    cell
}

/// Rasterize every charset entry with the given TrueType/OpenType font.
///
/// Characters the font lacks are drawn with the geta-mark glyph and logged;
/// if coverage drops below `cfg.min_coverage` the whole run fails.
pub fn rasterize(charset: &Charset, font_bytes: &[u8], font_id: &str, cfg: &RenderConfig) -> Result<(GlyphDataset, Vec<char>)> {
    let font = Font::from_bytes(font_bytes, FontSettings::default())
        .map_err(|e| Error::Font(format!("cannot parse font {font_id}: {e}")))?;
    let missing: Vec<char> = charset
        .entries()
        .iter()
        .copied()
        .filter(|&c| font.lookup_glyph_index(c) == 0)
        .collect();
    let coverage = 1.0 - missing.len() as f64 / charset.len() as f64;
    if coverage < cfg.min_coverage {
        let listed: Vec<String> = missing.iter().take(50).map(|c| format!("U+{:04X}", *c as u32)).collect();
        return Err(Error::Font(format!(
            "font {font_id} covers {:.2}% of the charset (< {:.2}%); {} missing: {}{}",
            coverage * 100.0,
            cfg.min_coverage * 100.0,
            missing.len(),
            listed.join(" "),
            if missing.len() > 50 { " ..." } else { "" }
        )));
    }
    if font.lookup_glyph_index(GETA) == 0 && !missing.is_empty() {
        return Err(Error::Font(format!(
            "font {font_id} lacks the geta mark needed as fallback glyph"
        )));
    }
    let fallback = render_glyph(&font, GETA, cfg.em_px);
    let images = charset
        .entries()
        .iter()
        .map(|&c| {
            let levels = if font.lookup_glyph_index(c) == 0 {
                log::warn!("U+{:04X} {c:?} missing from {font_id}; using geta mark", c as u32);
                fallback.clone()
            } else {
                render_glyph(&font, c, cfg.em_px)
            };
            GlyphImage::from_levels(c, levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((GlyphDataset::new(charset.clone(), images, font_id)?, missing))
}

pub fn encode_gly1(ds: &GlyphDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + ds.len() * (4 + IMAGE_PIXELS));
    out.extend_from_slice(GLY_MAGIC);
    out.extend_from_slice(&GLY_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u16).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u16).to_le_bytes());
    for img in &ds.images {
        out.extend_from_slice(&(img.codepoint as u32).to_le_bytes());
        out.extend_from_slice(&img.levels);
    }
    out
}

pub fn decode_gly1(bytes: &[u8], origin: &str, font_id: &str) -> Result<GlyphDataset> {
    let mut r = Reader::new(bytes, origin);
    r.magic(GLY_MAGIC)?;
    let version = r.u16()?;
    if version != GLY_VERSION {
        return Err(Error::parse(origin, format!("unsupported GLY1 version {version}")));
    }
    let count = r.u32()? as usize;
    let (w, h) = (r.u16()? as usize, r.u16()? as usize);
    if (w, h) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(Error::parse(origin, format!("image size {w}x{h}, expected 64x64")));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let cp = r.u32()?;
        let c = char::from_u32(cp)
            .ok_or_else(|| Error::parse(origin, format!("record {i}: invalid codepoint {cp:#x}")))?;
        images.push(GlyphImage::from_levels(c, r.bytes(IMAGE_PIXELS)?.to_vec())?);
    }
    r.finish()?;
    let charset = Charset::from_chars(images.iter().map(|g| g.codepoint))
        .map_err(|e| Error::parse(origin, e.to_string()))?;
    if charset.len() != images.len() || charset.entries().iter().zip(&images).any(|(&c, g)| c != g.codepoint) {
        return Err(Error::parse(origin, "records are not sorted by unique codepoint"));
    }
    GlyphDataset::new(charset, images, font_id)
}

pub fn save_dataset(ds: &GlyphDataset, path: &Path, meta: &DatasetMeta) -> Result<()> {
    fs::write(path, encode_gly1(ds)).map_err(|e| Error::io(path, e))?;
    let side = crate::autodiff::sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

/// Load a GLY1 file; the provenance string comes from the sidecar when present.
pub fn load_dataset(path: &Path) -> Result<GlyphDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = crate::autodiff::sidecar_path(path);
    let font_id = fs::read_to_string(&side)
        .ok()
        .and_then(|s| serde_json::from_str::<DatasetMeta>(&s).ok())
        .map(|m| m.font_id)
        .unwrap_or_else(|| "unknown".to_string());
    decode_gly1(&bytes, &path.display().to_string(), &font_id)
}
