//! Differentiable layers, Adam, weight I/O and a finite-difference oracle.

mod gradcheck;
mod layers;
mod network;
mod params;
mod weights;

pub use gradcheck::{check_layer, grad_check, relative_error, GradCheckConfig, GradCheckReport, GroupReport, Probe};
pub use layers::{conv_out_len, deconv_out_len, sigmoid, Conv1d, Conv2d, ConvTranspose2d, Layer, Linear, MaxPool1d};
pub use network::{Network, Tape};
pub use params::{AdamConfig, AdamState, Gradients, ParamStore};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, sidecar_path, WTS_MAGIC, WTS_VERSION};
