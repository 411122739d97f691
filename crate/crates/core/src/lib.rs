//! Glyph-aware disentangled character embeddings.
//!
//! A β-VAE is trained on rasterized character images; the encoder means
//! become per-character embedding vectors. A character-level CNN consumes
//! sequences of those vectors, optionally with sub-character augmentation
//! that nudges a single latent dimension per character.

pub mod augment;
pub mod autodiff;
pub mod clcnn;
pub mod error;
pub mod glyphset;
mod io;
pub mod tensor;
pub mod textcorpus;
pub mod vce;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
