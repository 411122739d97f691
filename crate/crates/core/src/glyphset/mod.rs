//! Character inventory and the rasterized glyph image dataset.

mod charset;
mod dataset;
mod font;

pub use charset::{Charset, GETA, PAD};
pub(crate) use charset::hex_string;
pub use font::{find_font, read_font, FONT_ENV};
pub use dataset::{
    decode_gly1, encode_gly1, load_dataset, rasterize, save_dataset, DatasetMeta, GlyphDataset, GlyphImage,
    RenderConfig, GLY_MAGIC, GLY_VERSION, IMAGE_PIXELS, IMAGE_SIDE,
};
