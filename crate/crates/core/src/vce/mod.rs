//! Variational character encoder: β-VAE over glyph images, the
//! autoencoder baseline, embedding export and latent traversal.

mod embedding;
mod loss;
mod model;
mod train;
mod traverse;

pub use embedding::{export_embeddings, DimStats, EmbeddingEntry, EmbeddingTable, EMB_MAGIC, EMB_VERSION};
pub use loss::{bernoulli_log_likelihood, check_elbo_gradients, elbo_loss, elbo_step, kl_dim, kl_divergence, ElboTerms, StepOutput};
pub use model::{load_vce, save_vce, Bottleneck, LatentCode, VceArch, VceMeta, VceModel, VceNets, LOGVAR_MAX, LOGVAR_MIN, PROB_EPS};
pub use train::{reparameterize, train_cae, train_vce, train_with_arch, LogRow, TrainLog, VceConfig};
pub use traverse::{traversal_offsets, traverse};
