use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_weights, save_weights, sigmoid, Layer, Network, ParamStore};
use crate::error::{Error, Result};
use crate::glyphset::{GlyphImage, IMAGE_PIXELS, IMAGE_SIDE};
use crate::tensor::{Scalar, Tensor};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    /// Mean and log-variance heads, sampled with the reparameterization trick.
    Variational,
    /// Plain autoencoder code; no sampling and no KL term.
    Deterministic,
}

/// Layer widths of the encoder/decoder pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VceArch {
    pub image_side: usize,
    /// Output channels of the four stride-2 convolutions.
    pub enc_channels: [usize; 4],
    pub hidden: usize,
    pub latent_dim: usize,
    /// Output channels of the first three transposed convolutions; the last one emits 1.
    pub dec_channels: [usize; 3],
    pub bottleneck: Bottleneck,
}

impl VceArch {
    /// 64×64 input; convolutions 32-32-64-64, dense 256, deconvolutions 64-32-32-1.
    pub fn standard(latent_dim: usize, bottleneck: Bottleneck) -> Self {
        VceArch {
            image_side: IMAGE_SIDE,
            enc_channels: [32, 32, 64, 64],
            hidden: 256,
            latent_dim,
            dec_channels: [64, 32, 32],
            bottleneck,
        }
    }

    /// Down-scaled variant for gradient checks.
    pub fn tiny(bottleneck: Bottleneck) -> Self {
        VceArch {
            image_side: 16,
            enc_channels: [2, 2, 3, 3],
            hidden: 6,
            latent_dim: 3,
            dec_channels: [3, 2, 2],
            bottleneck,
        }
    }

    pub fn head_width(&self) -> usize {
        match self.bottleneck {
            Bottleneck::Variational => 2 * self.latent_dim,
            Bottleneck::Deterministic => self.latent_dim,
        }
    }

    fn bottom_side(&self) -> usize {
        self.image_side / 16
    }
}

/// Encoder and decoder graphs for an architecture (no parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct VceNets {
    pub arch: VceArch,
    pub encoder: Network,
    /// Ends in logits; [`VceModel::decode`] applies the sigmoid.
    pub decoder: Network,
}

impl VceNets {
    pub fn new(arch: &VceArch) -> Result<Self> {
        if arch.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if arch.image_side < 16 || arch.image_side % 16 != 0 {
            return Err(Error::Config(format!(
                "image side {} must be a positive multiple of 16",
                arch.image_side
            )));
        }
        let [c1, c2, c3, c4] = arch.enc_channels;
        let b = arch.bottom_side();
        let flat = c4 * b * b;
        let encoder = Network::new(
            "encoder",
            &[1, arch.image_side, arch.image_side],
            vec![
                Layer::conv2d("enc.conv1", 1, c1, 4, 2, 1),
                Layer::Relu,
                Layer::conv2d("enc.conv2", c1, c2, 4, 2, 1),
                Layer::Relu,
                Layer::conv2d("enc.conv3", c2, c3, 4, 2, 1),
                Layer::Relu,
                Layer::conv2d("enc.conv4", c3, c4, 4, 2, 1),
                Layer::Relu,
                Layer::Reshape(vec![flat]),
                Layer::linear("enc.fc1", flat, arch.hidden),
                Layer::Relu,
                Layer::linear("enc.head", arch.hidden, arch.head_width()),
            ],
        )?;
        let [d1, d2, d3] = arch.dec_channels;
        let decoder = Network::new(
            "decoder",
            &[arch.latent_dim],
            vec![
                Layer::linear("dec.fc1", arch.latent_dim, arch.hidden),
                Layer::Relu,
                Layer::linear("dec.fc2", arch.hidden, flat),
                Layer::Relu,
                Layer::Reshape(vec![c4, b, b]),
                Layer::deconv2d("dec.deconv1", c4, d1, 4, 2, 1),
                Layer::Relu,
                Layer::deconv2d("dec.deconv2", d1, d2, 4, 2, 1),
                Layer::Relu,
                Layer::deconv2d("dec.deconv3", d2, d3, 4, 2, 1),
                Layer::Relu,
                Layer::deconv2d("dec.deconv4", d3, 1, 4, 2, 1),
            ],
        )?;
        Ok(VceNets { arch: arch.clone(), encoder, decoder })
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        self.encoder.init_params(&mut params, &mut rng)?;
        self.decoder.init_params(&mut params, &mut rng)?;
        Ok(params)
    }

    /// Split encoder head rows into `(mu, logvar)`; logvar is clamped and
    /// empty for the deterministic bottleneck.
    pub fn split_head<T: Scalar>(&self, head: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let d = self.arch.latent_dim;
        let w = self.arch.head_width();
        let n = head.shape()[0];
        let mut mu = Vec::with_capacity(n * d);
        let mut logvar = Vec::new();
        for row in head.data().chunks(w) {
            mu.extend_from_slice(&row[..d]);
            if self.arch.bottleneck == Bottleneck::Variational {
                logvar.extend(
                    row[d..]
                        .iter()
                        .map(|&v| v.max(T::lit(LOGVAR_MIN)).min(T::lit(LOGVAR_MAX))),
                );
            }
        }
        (mu, logvar)
    }
}

/// Gaussian posterior parameters for one character.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f32>,
    /// `exp(logvar / 2)`; zeros for the deterministic bottleneck.
    pub sigma: Vec<f32>,
}

/// Trained (or freshly initialized) encoder/decoder with parameters.
#[derive(Clone, Debug)]
pub struct VceModel {
    pub nets: VceNets,
    pub params: ParamStore<f32>,
}

pub(crate) fn images_to_tensor<'a, I>(images: I, side: usize) -> Tensor<f32>
where
    I: IntoIterator<Item = &'a GlyphImage>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        data.extend(img.levels().iter().map(|&v| v as f32 / 255.0));
        n += 1;
    }
    Tensor::from_vec(&[n, 1, side, side], data)
}

impl VceModel {
    pub fn new(arch: &VceArch, seed: u64) -> Result<Self> {
        let nets = VceNets::new(arch)?;
        let params = nets.init_params(seed)?;
        Ok(VceModel { nets, params })
    }

    /// Wrap loaded parameters, checking names and shapes against the architecture.
    pub fn from_params(arch: &VceArch, params: ParamStore<f32>) -> Result<Self> {
        let nets = VceNets::new(arch)?;
        let reference: ParamStore<f32> = nets.init_params(0)?;
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        name,
                        format!("stored shape {:?}, architecture expects {:?}", p.shape(), t.shape()),
                    ))
                }
                None => return Err(Error::Data(format!("weights file lacks `{name}`"))),
            }
        }
        if params.len() != reference.len() {
            return Err(Error::Data("weights file has unexpected extra tensors".into()));
        }
        Ok(VceModel { nets, params })
    }

    pub fn arch(&self) -> &VceArch {
        &self.nets.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.nets.arch.latent_dim
    }

    /// Encode a batch `[N, 1, side, side]` into per-sample codes.
    pub fn encode_batch(&self, x: &Tensor<f32>) -> Result<Vec<LatentCode>> {
        let head = self.nets.encoder.forward(&self.params, x)?;
        let (mu, logvar) = self.nets.split_head(&head);
        let d = self.latent_dim();
        Ok(mu
            .chunks(d)
            .enumerate()
            .map(|(i, m)| LatentCode {
                mu: m.to_vec(),
                sigma: if logvar.is_empty() {
                    vec![0.0; d]
                } else {
                    logvar[i * d..(i + 1) * d].iter().map(|&lv| (lv * 0.5).exp()).collect()
                },
            })
            .collect())
    }

    pub fn encode(&self, image: &GlyphImage) -> Result<LatentCode> {
        if self.nets.arch.image_side != IMAGE_SIDE {
            return Err(Error::shape("encoder", "model expects a non-64×64 input"));
        }
        let x = images_to_tensor(std::iter::once(image), IMAGE_SIDE);
        Ok(self.encode_batch(&x)?.remove(0))
    }

    /// Encode many images in chunks of `batch`.
    pub fn encode_all(&self, images: &[GlyphImage], batch: usize) -> Result<Vec<LatentCode>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            let x = images_to_tensor(chunk, self.nets.arch.image_side);
            out.extend(self.encode_batch(&x)?);
        }
        Ok(out)
    }

    /// Decode latent rows `[N, d]` to probabilities in `(0, 1)`, shape `[N, 1, side, side]`.
    ///
    /// Outputs are clamped to `[1e-6, 1 - 1e-6]`, where f32 sigmoid would round to 0 or 1.
    pub fn decode_batch(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let logits = self.nets.decoder.forward(&self.params, z)?;
        Ok(logits.map(|l| sigmoid(l).clamp(PROB_EPS as f32, 1.0 - PROB_EPS as f32)))
    }

    /// Decode one latent vector to a row-major image in `(0, 1)`.
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape(
                "decoder",
                format!("latent vector has length {}, expected {}", z.len(), self.latent_dim()),
            ));
        }
        let out = self.decode_batch(&Tensor::from_vec(&[1, z.len()], z.to_vec()))?;
        Ok(out.into_data())
    }

    pub fn image_pixels(&self) -> usize {
        if self.nets.arch.image_side == IMAGE_SIDE {
            IMAGE_PIXELS
        } else {
            self.nets.arch.image_side * self.nets.arch.image_side
        }
    }
}

/// Sidecar metadata stored next to encoder/decoder weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VceMeta {
    pub arch: VceArch,
    pub beta: f64,
    pub seed: u64,
    pub steps: usize,
    pub best_step: usize,
    pub charset_hash: String,
    pub font_id: String,
}

pub fn save_vce(path: &Path, model: &VceModel, meta: &VceMeta) -> Result<()> {
    if &meta.arch != model.arch() {
        return Err(Error::Config("encoder metadata does not match the model architecture".into()));
    }
    save_weights(path, &model.params, meta)
}

pub fn load_vce(path: &Path) -> Result<(VceModel, VceMeta)> {
    let (params, meta): (_, VceMeta) = load_weights(path)?;
    let model = VceModel::from_params(&meta.arch, params)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shape_chains() {
        let nets = VceNets::new(&VceArch::standard(10, Bottleneck::Variational)).unwrap();
        let spatial: Vec<usize> = nets
            .encoder
            .shape_chain()
            .iter()
            .filter(|s| s.len() == 3)
            .map(|s| s[1])
            .collect();
        assert!(spatial.starts_with(&[64, 32]));
        assert_eq!(nets.encoder.output_shape(), &[20]);
        assert_eq!(nets.decoder.output_shape(), &[1, 64, 64]);
    }

    #[test]
    fn zero_weights_give_standard_normal_code() {
        let mut model = VceModel::new(&VceArch::standard(10, Bottleneck::Variational), 1).unwrap();
        for (_, t) in model.params.iter_mut() {
            t.fill(0.0);
        }
        let img = GlyphImage::from_levels('a', vec![0; IMAGE_PIXELS]).unwrap();
        let code = model.encode(&img).unwrap();
        assert_eq!(code.mu, vec![0.0; 10]);
        assert_eq!(code.sigma, vec![1.0; 10]);
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let model = VceModel::new(&VceArch::tiny(Bottleneck::Variational), 1).unwrap();
        assert!(model.decode(&[0.0; 2]).is_err());
    }

    #[test]
    fn decode_output_is_probability_image() {
        let model = VceModel::new(&VceArch::standard(10, Bottleneck::Variational), 3).unwrap();
        let img = model.decode(&[0.5; 10]).unwrap();
        assert_eq!(img.len(), IMAGE_PIXELS);
        assert!(img.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn deterministic_head_has_latent_width() {
        let nets = VceNets::new(&VceArch::standard(10, Bottleneck::Deterministic)).unwrap();
        assert_eq!(nets.encoder.output_shape(), &[10]);
    }
}
