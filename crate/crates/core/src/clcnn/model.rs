use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_out_len, Layer, Network, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Conv kernel width and pooling window/stride of the classifier stack.
const KERNEL: usize = 3;
const POOL: usize = 3;

/// Shortest window that survives the whole stack with final length 1.
pub const MIN_WINDOW: usize = 53;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClcnnArch {
    /// Window length in characters.
    pub c: usize,
    /// Embedding dimension (input channels).
    pub d: usize,
    /// Output channels of every convolution.
    pub channels: usize,
    pub classes: usize,
}

impl ClcnnArch {
    pub fn new(c: usize, d: usize, channels: usize, classes: usize) -> Result<Self> {
        let arch = ClcnnArch { c, d, channels, classes };
        arch.lengths()?;
        if d == 0 || channels == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs d >= 1, channels >= 1 and at least 2 classes (got d={d}, channels={channels}, classes={classes})"
            )));
        }
        Ok(arch)
    }

    /// Sequence length after each conv/pool stage, starting with `c`.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let too_short = || {
            Error::Config(format!(
                "window length c={} is too short for the classifier; need c >= {MIN_WINDOW}",
                self.c
            ))
        };
        let mut out = vec![self.c];
        let mut len = self.c;
        for (k, s) in [(KERNEL, 1), (POOL, POOL), (KERNEL, 1), (POOL, POOL), (KERNEL, 1), (KERNEL, 1)] {
            len = conv_out_len(len, k, s, 0).filter(|&l| l >= 1).ok_or_else(too_short)?;
            out.push(len);
        }
        Ok(out)
    }

    pub fn final_len(&self) -> usize {
        *self.lengths().expect("validated").last().expect("non-empty")
    }

    pub fn flat_features(&self) -> usize {
        self.channels * self.final_len()
    }
}

pub fn build_network(arch: &ClcnnArch) -> Result<Network> {
    let ch = arch.channels;
    Network::new(
        "clcnn",
        &[arch.d, arch.c],
        vec![
            Layer::conv1d("conv1", arch.d, ch, KERNEL),
            Layer::Relu,
            Layer::maxpool1d("pool1", POOL, POOL),
            Layer::conv1d("conv2", ch, ch, KERNEL),
            Layer::Relu,
            Layer::maxpool1d("pool2", POOL, POOL),
            Layer::conv1d("conv3", ch, ch, KERNEL),
            Layer::Relu,
            Layer::conv1d("conv4", ch, ch, KERNEL),
            Layer::Relu,
            Layer::Reshape(vec![arch.flat_features()]),
            Layer::linear("fc", arch.flat_features(), arch.classes),
        ],
    )
}

pub fn init_params<T: Scalar>(net: &Network, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    net.init_params(&mut params, &mut rng)?;
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct ClcnnModel {
    pub arch: ClcnnArch,
    pub net: Network,
    pub params: ParamStore<f32>,
}

impl ClcnnModel {
    pub fn new(arch: &ClcnnArch, seed: u64) -> Result<Self> {
        let net = build_network(arch)?;
        let params = init_params(&net, seed)?;
        Ok(ClcnnModel { arch: arch.clone(), net, params })
    }

    pub fn from_params(arch: &ClcnnArch, params: ParamStore<f32>) -> Result<Self> {
        let net = build_network(arch)?;
        let reference: ParamStore<f32> = init_params(&net, 0)?;
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
        Ok(ClcnnModel { arch: arch.clone(), net, params })
    }

    /// Logits `[N, classes]` for channels-first input `[N, d, c]`.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.forward(&self.params, x)
    }
}

/// Numerically stable softmax in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
