//! Layer definitions with hand-written forward and backward passes.
//!
//! All tensors carry a leading batch axis. Convolutions lower to im2col
//! followed by a single GEMM over the whole batch.

use rand::Rng;

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor, Trans};

/// Geometry of a 2-D correlation, also used for 1-D (`h = kh = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Rows per scratch plane: `qy` ranges over `oy + ki / sh`.
    fn zh(&self) -> usize {
        (self.kh - 1) / self.sh + self.oh
    }

    /// Scratch holding, for each row phase `py` and kernel column `kj`, the
    /// plane `z[py][kj][qy][ox] = padded(qy*sh + py, ox*sw + kj)`. The im2col
    /// block for `(ki, kj)` is then the contiguous run starting at row `ki / sh`
    /// of plane `(ki % sh, kj)`. Rows that fall in the padding are never
    /// written and stay zero.
    fn z_len(&self) -> usize {
        self.sh * self.kw * self.zh() * self.ow
    }

    fn z_block(&self, ki: usize, kj: usize) -> usize {
        (((ki % self.sh) * self.kw + kj) * self.zh() + ki / self.sh) * self.ow
    }

    /// Width of one column phase of a padded input row.
    fn wq(&self) -> usize {
        (self.w + 2 * self.pw).div_ceil(self.sw)
    }

    /// For each column phase, the first input column in it and its slot.
    fn row_phases(&self) -> Vec<(usize, usize)> {
        (0..self.sw)
            .filter_map(|px| {
                let x0 = (px + self.sw - self.pw % self.sw) % self.sw;
                (x0 < self.w).then(|| (x0, (x0 + self.pw) / self.sw))
            })
            .collect()
    }

    /// Offsets of scratch row `(py, kj = 0, qy)` for each input row `y`; `zh*ow`
    /// separates consecutive `kj`.
    fn z_rows(&self) -> Vec<usize> {
        let zh = self.zh();
        (0..self.h)
            .map(|y| {
                let yp = y + self.ph;
                ((yp % self.sh) * self.kw * zh + yp / self.sh) * self.ow
            })
            .collect()
    }

    /// `cols[(c,ki,kj), b*P + oy*ow + ox] = input[b, c, oy*sh+ki-ph, ox*sw+kj-pw]`.
    fn im2col<T: Scalar>(&self, input: &[T], n: usize, cols: &mut [T]) {
        let p = self.positions();
        let np = n * p;
        let plane = self.h * self.w;
        let (ow, wq, sw) = (self.ow, self.wq(), self.sw);
        let kj_stride = self.zh() * ow;
        let phases = self.row_phases();
        let z_rows = self.z_rows();
        let blocks: Vec<usize> = (0..self.kh)
            .flat_map(|ki| (0..self.kw).map(move |kj| (ki, kj)))
            .map(|(ki, kj)| self.z_block(ki, kj))
            .collect();
        let mut z = vec![T::zero(); self.z_len()];
        let mut split = vec![T::zero(); sw * wq];
        for b in 0..n {
            for ci in 0..self.c {
                let src = &input[(b * self.c + ci) * plane..(b * self.c + ci + 1) * plane];
                for (row, &zr) in src.chunks_exact(self.w).zip(&z_rows) {
                    for (px, &(x0, slot)) in phases.iter().enumerate() {
                        let dst = &mut split[px * wq + slot..(px + 1) * wq];
                        strided_copy(&row[x0..], sw, dst);
                    }
                    for kj in 0..self.kw {
                        let at = (kj % sw) * wq + kj / sw;
                        let zo = zr + kj * kj_stride;
                        z[zo..zo + ow].copy_from_slice(&split[at..at + ow]);
                    }
                }
                for (r, &at) in blocks.iter().enumerate() {
                    let row = ci * self.kh * self.kw + r;
                    cols[row * np + b * p..row * np + (b + 1) * p].copy_from_slice(&z[at..at + p]);
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]; accumulates into `out`.
    fn col2im<T: Scalar>(&self, cols: &[T], n: usize, out: &mut [T]) {
        let p = self.positions();
        let np = n * p;
        let plane = self.h * self.w;
        let (ow, wq, sw) = (self.ow, self.wq(), self.sw);
        let kj_stride = self.zh() * ow;
        let phases = self.row_phases();
        let z_rows = self.z_rows();
        let blocks: Vec<usize> = (0..self.kh)
            .flat_map(|ki| (0..self.kw).map(move |kj| (ki, kj)))
            .map(|(ki, kj)| self.z_block(ki, kj))
            .collect();
        let mut z = vec![T::zero(); self.z_len()];
        let mut split = vec![T::zero(); sw * wq];
        for b in 0..n {
            for ci in 0..self.c {
                z.fill(T::zero());
                for (r, &at) in blocks.iter().enumerate() {
                    let row = ci * self.kh * self.kw + r;
                    let src = &cols[row * np + b * p..row * np + (b + 1) * p];
                    for (d, &v) in z[at..at + p].iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
                let dst = &mut out[(b * self.c + ci) * plane..(b * self.c + ci + 1) * plane];
                for (row, &zr) in dst.chunks_exact_mut(self.w).zip(&z_rows) {
                    split.fill(T::zero());
                    for kj in 0..self.kw {
                        let at = (kj % sw) * wq + kj / sw;
                        let zo = zr + kj * kj_stride;
                        for (d, &v) in split[at..at + ow].iter_mut().zip(&z[zo..zo + ow]) {
                            *d = *d + v;
                        }
                    }
                    for (px, &(x0, slot)) in phases.iter().enumerate() {
                        strided_add(&split[px * wq + slot..(px + 1) * wq], &mut row[x0..], sw);
                    }
                }
            }
        }
    }
}

/// `dst[i] = src[i * step]` for as many elements as both allow.
fn strided_copy<T: Scalar>(src: &[T], step: usize, dst: &mut [T]) {
    match step {
        1 => {
            let k = dst.len().min(src.len());
            dst[..k].copy_from_slice(&src[..k]);
        }
        2 => {
            let k = dst.len().min(src.len().div_ceil(2));
            let full = src.len() / 2;
            for (d, pair) in dst[..k.min(full)].iter_mut().zip(src.chunks_exact(2)) {
                *d = pair[0];
            }
            if k > full {
                dst[full] = src[2 * full];
            }
        }
        _ => {
            for (d, &v) in dst.iter_mut().zip(src.iter().step_by(step)) {
                *d = v;
            }
        }
    }
}

/// `dst[i * step] += src[i]`, the adjoint of [`strided_copy`].
fn strided_add<T: Scalar>(src: &[T], dst: &mut [T], step: usize) {
    match step {
        1 => {
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = *d + v;
            }
        }
        2 => {
            let k = src.len().min(dst.len().div_ceil(2));
            let full = dst.len() / 2;
            for (pair, &v) in dst.chunks_exact_mut(2).zip(&src[..k.min(full)]) {
                pair[0] = pair[0] + v;
            }
            if k > full {
                dst[2 * full] = dst[2 * full] + src[full];
            }
        }
        _ => {
            for (d, &v) in dst.iter_mut().step_by(step).zip(src) {
                *d = *d + v;
            }
        }
    }
}

/// `floor((len + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn conv_out_len(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = len + 2 * p;
    if s == 0 || padded < k {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

/// `(len - 1) * s - 2p + k`, or `None` when non-positive.
pub fn deconv_out_len(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let full = (len - 1) * s + k;
    (full > 2 * p).then(|| full - 2 * p)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Transposed 2-D convolution; weight layout `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvTranspose2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Stride-1 1-D convolution without padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv1d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPool1d {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Linear(Linear),
    Relu,
    Sigmoid,
    /// Reinterpret each sample with a new shape of equal size.
    Reshape(Vec<usize>),
}

fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

impl Layer {
    pub fn conv2d(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Layer::Conv2d(Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn deconv2d(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Layer::ConvTranspose2d(ConvTranspose2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn conv1d(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Layer::Conv1d(Conv1d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn maxpool1d(name: &str, kernel: usize, stride: usize) -> Self {
        Layer::MaxPool1d(MaxPool1d {
            name: name.into(),
            kernel,
            stride,
        })
    }

    pub fn linear(name: &str, in_features: usize, out_features: usize) -> Self {
        Layer::Linear(Linear {
            name: name.into(),
            in_features,
            out_features,
        })
    }

    pub fn label(&self) -> String {
        match self {
            Layer::Conv2d(l) => format!("{} (Conv2d)", l.name),
            Layer::ConvTranspose2d(l) => format!("{} (ConvTranspose2d)", l.name),
            Layer::Conv1d(l) => format!("{} (Conv1d)", l.name),
            Layer::MaxPool1d(l) => format!("{} (MaxPool1d)", l.name),
            Layer::Linear(l) => format!("{} (Linear)", l.name),
            Layer::Relu => "ReLU".into(),
            Layer::Sigmoid => "Sigmoid".into(),
            Layer::Reshape(s) => format!("Reshape{s:?}"),
        }
    }

    /// Per-sample output shape, or a shape error naming this layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |msg: String| Err(Error::shape(self.label(), msg));
        match self {
            Layer::Conv2d(l) => {
                let [c, h, w] = input else {
                    return err(format!("expected [C, H, W] input, got {input:?}"));
                };
                if *c != l.in_channels {
                    return err(format!("expected {} input channels, got {c}", l.in_channels));
                }
                match (
                    conv_out_len(*h, l.kernel, l.stride, l.padding),
                    conv_out_len(*w, l.kernel, l.stride, l.padding),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![l.out_channels, oh, ow]),
                    _ => err(format!("input {h}x{w} smaller than kernel {}", l.kernel)),
                }
            }
            Layer::ConvTranspose2d(l) => {
                let [c, h, w] = input else {
                    return err(format!("expected [C, H, W] input, got {input:?}"));
                };
                if *c != l.in_channels {
                    return err(format!("expected {} input channels, got {c}", l.in_channels));
                }
                match (
                    deconv_out_len(*h, l.kernel, l.stride, l.padding),
                    deconv_out_len(*w, l.kernel, l.stride, l.padding),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![l.out_channels, oh, ow]),
                    _ => err(format!("output size non-positive for input {h}x{w}")),
                }
            }
            Layer::Conv1d(l) => {
                let [c, len] = input else {
                    return err(format!("expected [C, L] input, got {input:?}"));
                };
                if *c != l.in_channels {
                    return err(format!("expected {} input channels, got {c}", l.in_channels));
                }
                match conv_out_len(*len, l.kernel, 1, 0) {
                    Some(out) => Ok(vec![l.out_channels, out]),
                    None => err(format!("incoming length {len} shorter than kernel {}", l.kernel)),
                }
            }
            Layer::MaxPool1d(l) => {
                let [c, len] = input else {
                    return err(format!("expected [C, L] input, got {input:?}"));
                };
                match conv_out_len(*len, l.kernel, l.stride, 0) {
                    Some(out) => Ok(vec![*c, out]),
                    None => err(format!("incoming length {len} shorter than window {}", l.kernel)),
                }
            }
            Layer::Linear(l) => {
                if input != [l.in_features] {
                    return err(format!("expected [{}] input, got {input:?}", l.in_features));
                }
                Ok(vec![l.out_features])
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Reshape(shape) => {
                let a: usize = input.iter().product();
                let b: usize = shape.iter().product();
                if a != b {
                    return err(format!("cannot reshape {input:?} ({a}) into {shape:?} ({b})"));
                }
                Ok(shape.clone())
            }
        }
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let (name, wshape, fan_in, out) = match self {
            Layer::Conv2d(l) => (
                &l.name,
                vec![l.out_channels, l.in_channels, l.kernel, l.kernel],
                l.in_channels * l.kernel * l.kernel,
                l.out_channels,
            ),
            Layer::ConvTranspose2d(l) => (
                &l.name,
                vec![l.in_channels, l.out_channels, l.kernel, l.kernel],
                // each output pixel sees in_channels * (k/s)^2 taps
                (l.in_channels * l.kernel * l.kernel / (l.stride * l.stride)).max(1),
                l.out_channels,
            ),
            Layer::Conv1d(l) => (
                &l.name,
                vec![l.out_channels, l.in_channels, l.kernel],
                l.in_channels * l.kernel,
                l.out_channels,
            ),
            Layer::Linear(l) => (
                &l.name,
                vec![l.out_features, l.in_features],
                l.in_features,
                l.out_features,
            ),
            _ => return Ok(()),
        };
        store.insert(weight_name(name), he_uniform(&wshape, fan_in, rng))?;
        store.insert(bias_name(name), Tensor::zeros(&[out]))?;
        Ok(())
    }

    /// Forward pass over a batch. Max-pool layers record argmax positions in `aux`.
    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>, aux: &mut Vec<u32>) -> Tensor<T> {
        let n = x.shape()[0];
        match self {
            Layer::Conv2d(l) => {
                let g = conv2d_geom(l, x.shape());
                conv_forward(&g, l.out_channels, params, &l.name, x, n)
            }
            Layer::Conv1d(l) => {
                let g = conv1d_geom(l, x.shape());
                conv_forward(&g, l.out_channels, params, &l.name, x, n)
            }
            Layer::ConvTranspose2d(l) => deconv_forward(l, params, x, n),
            Layer::MaxPool1d(l) => maxpool_forward(l, x, aux),
            Layer::Linear(l) => {
                let w = params.expect(&weight_name(&l.name));
                let b = params.expect(&bias_name(&l.name));
                let mut y = vec![T::zero(); n * l.out_features];
                for row in y.chunks_mut(l.out_features) {
                    row.copy_from_slice(b.data());
                }
                gemm(n, l.in_features, l.out_features, x.data(), Trans::No, w.data(), Trans::Yes, T::one(), &mut y);
                Tensor::from_vec(&[n, l.out_features], y)
            }
            Layer::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::Sigmoid => x.map(sigmoid),
            Layer::Reshape(shape) => {
                let mut s = vec![n];
                s.extend_from_slice(shape);
                x.clone().reshape(&s)
            }
        }
    }

    /// Backward pass. Accumulates parameter gradients and returns the
    /// gradient with respect to `x` when `need_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        aux: &[u32],
        gy: &Tensor<T>,
        grads: &mut Gradients<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let n = x.shape()[0];
        match self {
            Layer::Conv2d(l) => {
                let g = conv2d_geom(l, x.shape());
                conv_backward(&g, l.out_channels, params, &l.name, x, gy, n, grads, need_input_grad)
            }
            Layer::Conv1d(l) => {
                let g = conv1d_geom(l, x.shape());
                conv_backward(&g, l.out_channels, params, &l.name, x, gy, n, grads, need_input_grad)
            }
            Layer::ConvTranspose2d(l) => deconv_backward(l, params, x, gy, n, grads, need_input_grad),
            Layer::MaxPool1d(_) => need_input_grad.then(|| {
                let mut dx = Tensor::zeros(x.shape());
                let d = dx.data_mut();
                for (&idx, &g) in aux.iter().zip(gy.data()) {
                    d[idx as usize] = d[idx as usize] + g;
                }
                dx
            }),
            Layer::Linear(l) => {
                let w = params.expect(&weight_name(&l.name));
                {
                    let gb = grads.expect_mut(&bias_name(&l.name)).data_mut();
                    for row in gy.data().chunks(l.out_features) {
                        for (a, &b) in gb.iter_mut().zip(row) {
                            *a = *a + b;
                        }
                    }
                }
                gemm(
                    l.out_features,
                    n,
                    l.in_features,
                    gy.data(),
                    Trans::Yes,
                    x.data(),
                    Trans::No,
                    T::one(),
                    grads.expect_mut(&weight_name(&l.name)).data_mut(),
                );
                need_input_grad.then(|| {
                    let mut dx = vec![T::zero(); n * l.in_features];
                    gemm(n, l.out_features, l.in_features, gy.data(), Trans::No, w.data(), Trans::No, T::zero(), &mut dx);
                    Tensor::from_vec(x.shape(), dx)
                })
            }
            Layer::Relu => need_input_grad.then(|| {
                let data = y
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                Tensor::from_vec(x.shape(), data)
            }),
            Layer::Sigmoid => need_input_grad.then(|| {
                let data = y
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                Tensor::from_vec(x.shape(), data)
            }),
            Layer::Reshape(_) => need_input_grad.then(|| gy.clone().reshape(x.shape())),
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn conv2d_geom(l: &Conv2d, shape: &[usize]) -> ConvGeom {
    let (h, w) = (shape[2], shape[3]);
    ConvGeom {
        c: l.in_channels,
        h,
        w,
        kh: l.kernel,
        kw: l.kernel,
        sh: l.stride,
        sw: l.stride,
        ph: l.padding,
        pw: l.padding,
        oh: conv_out_len(h, l.kernel, l.stride, l.padding).expect("validated at build time"),
        ow: conv_out_len(w, l.kernel, l.stride, l.padding).expect("validated at build time"),
    }
}

fn conv1d_geom(l: &Conv1d, shape: &[usize]) -> ConvGeom {
    let len = shape[2];
    ConvGeom {
        c: l.in_channels,
        h: 1,
        w: len,
        kh: 1,
        kw: l.kernel,
        sh: 1,
        sw: 1,
        ph: 0,
        pw: 0,
        oh: 1,
        ow: conv_out_len(len, l.kernel, 1, 0).expect("validated at build time"),
    }
}

/// Geometry of the correlation whose input-gradient is this transposed conv.
fn deconv_geom(l: &ConvTranspose2d, shape: &[usize]) -> ConvGeom {
    let (h, w) = (shape[2], shape[3]);
    ConvGeom {
        c: l.out_channels,
        h: deconv_out_len(h, l.kernel, l.stride, l.padding).expect("validated at build time"),
        w: deconv_out_len(w, l.kernel, l.stride, l.padding).expect("validated at build time"),
        kh: l.kernel,
        kw: l.kernel,
        sh: l.stride,
        sw: l.stride,
        ph: l.padding,
        pw: l.padding,
        oh: h,
        ow: w,
    }
}

fn output_shape_of(n: usize, c: usize, g: &ConvGeom, one_d: bool) -> Vec<usize> {
    if one_d {
        vec![n, c, g.ow]
    } else {
        vec![n, c, g.oh, g.ow]
    }
}

/// Samples per im2col chunk, sized so the column buffer stays cache resident.
fn chunk_samples(n: usize, rows: usize, p: usize) -> usize {
    const TARGET_FLOATS: usize = 1 << 18;
    (TARGET_FLOATS / (rows * p).max(1)).clamp(1, n.max(1))
}

/// `[nb, C, P]` -> `[C, nb*P]`, written into `out`.
fn gather_channel_major<T: Scalar>(data: &[T], nb: usize, c: usize, p: usize, out: &mut [T]) {
    for bi in 0..nb {
        for ci in 0..c {
            out[(ci * nb + bi) * p..(ci * nb + bi + 1) * p].copy_from_slice(&data[(bi * c + ci) * p..(bi * c + ci + 1) * p]);
        }
    }
}

/// `[C, nb*P]` -> `[nb, C, P]`, written into `out`.
fn scatter_batch_major<T: Scalar>(data: &[T], nb: usize, c: usize, p: usize, out: &mut [T]) {
    for ci in 0..c {
        for bi in 0..nb {
            out[(bi * c + ci) * p..(bi * c + ci + 1) * p].copy_from_slice(&data[(ci * nb + bi) * p..(ci * nb + bi + 1) * p]);
        }
    }
}

fn conv_forward<T: Scalar>(g: &ConvGeom, out_c: usize, params: &ParamStore<T>, name: &str, x: &Tensor<T>, n: usize) -> Tensor<T> {
    let w = params.expect(&weight_name(name));
    let b = params.expect(&bias_name(name));
    let p = g.positions();
    let in_len = g.c * g.h * g.w;
    let out_len = out_c * p;
    let chunk = chunk_samples(n, g.rows(), p);
    let mut cols = vec![T::zero(); g.rows() * chunk * p];
    let mut yt = vec![T::zero(); out_c * chunk * p];
    let mut y = vec![T::zero(); n * out_len];
    for b0 in (0..n).step_by(chunk) {
        let nb = chunk.min(n - b0);
        let np = nb * p;
        g.im2col(&x.data()[b0 * in_len..(b0 + nb) * in_len], nb, &mut cols[..g.rows() * np]);
        gemm(out_c, g.rows(), np, w.data(), Trans::No, &cols[..g.rows() * np], Trans::No, T::zero(), &mut yt[..out_c * np]);
        let ys = &mut y[b0 * out_len..(b0 + nb) * out_len];
        scatter_batch_major(&yt[..out_c * np], nb, out_c, p, ys);
        for (i, plane) in ys.chunks_mut(p).enumerate() {
            let bias = b.data()[i % out_c];
            plane.iter_mut().for_each(|v| *v = *v + bias);
        }
    }
    Tensor::from_vec(&output_shape_of(n, out_c, g, x.shape().len() == 3), y)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    out_c: usize,
    params: &ParamStore<T>,
    name: &str,
    x: &Tensor<T>,
    gy: &Tensor<T>,
    n: usize,
    grads: &mut Gradients<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let p = g.positions();
    let in_len = g.c * g.h * g.w;
    let out_len = out_c * p;
    {
        let gb = grads.expect_mut(&bias_name(name)).data_mut();
        for (i, plane) in gy.data().chunks(p).enumerate() {
            let o = i % out_c;
            gb[o] = plane.iter().fold(gb[o], |acc, &v| acc + v);
        }
    }
    let w = params.expect(&weight_name(name));
    let chunk = chunk_samples(n, g.rows(), p);
    let mut cols = vec![T::zero(); g.rows() * chunk * p];
    let mut dyt = vec![T::zero(); out_c * chunk * p];
    let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    for b0 in (0..n).step_by(chunk) {
        let nb = chunk.min(n - b0);
        let np = nb * p;
        let cols = &mut cols[..g.rows() * np];
        let dyt = &mut dyt[..out_c * np];
        gather_channel_major(&gy.data()[b0 * out_len..(b0 + nb) * out_len], nb, out_c, p, dyt);
        g.im2col(&x.data()[b0 * in_len..(b0 + nb) * in_len], nb, cols);
        gemm(
            out_c,
            np,
            g.rows(),
            dyt,
            Trans::No,
            cols,
            Trans::Yes,
            T::one(),
            grads.expect_mut(&weight_name(name)).data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            gemm(g.rows(), out_c, np, w.data(), Trans::Yes, dyt, Trans::No, T::zero(), cols);
            g.col2im(cols, nb, &mut dx.data_mut()[b0 * in_len..(b0 + nb) * in_len]);
        }
    }
    dx
}

fn deconv_forward<T: Scalar>(l: &ConvTranspose2d, params: &ParamStore<T>, x: &Tensor<T>, n: usize) -> Tensor<T> {
    let g = deconv_geom(l, x.shape());
    let w = params.expect(&weight_name(&l.name));
    let b = params.expect(&bias_name(&l.name));
    let hw = g.oh * g.ow;
    let in_len = l.in_channels * hw;
    let plane = g.h * g.w;
    let out_len = l.out_channels * plane;
    let chunk = chunk_samples(n, g.rows(), hw);
    let mut xm = vec![T::zero(); in_len * chunk];
    let mut cols = vec![T::zero(); g.rows() * chunk * hw];
    let mut y = vec![T::zero(); n * out_len];
    for b0 in (0..n).step_by(chunk) {
        let nb = chunk.min(n - b0);
        let np = nb * hw;
        let xm = &mut xm[..in_len * nb];
        let cols = &mut cols[..g.rows() * np];
        gather_channel_major(&x.data()[b0 * in_len..(b0 + nb) * in_len], nb, l.in_channels, hw, xm);
        gemm(g.rows(), l.in_channels, np, w.data(), Trans::Yes, xm, Trans::No, T::zero(), cols);
        g.col2im(cols, nb, &mut y[b0 * out_len..(b0 + nb) * out_len]);
    }
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let bias = b.data()[i % l.out_channels];
        chunk.iter_mut().for_each(|v| *v = *v + bias);
    }
    Tensor::from_vec(&[n, l.out_channels, g.h, g.w], y)
}

fn deconv_backward<T: Scalar>(
    l: &ConvTranspose2d,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    gy: &Tensor<T>,
    n: usize,
    grads: &mut Gradients<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let g = deconv_geom(l, x.shape());
    let hw = g.oh * g.ow;
    let in_len = l.in_channels * hw;
    let plane = g.h * g.w;
    let out_len = l.out_channels * plane;
    {
        let gb = grads.expect_mut(&bias_name(&l.name)).data_mut();
        for (i, chunk) in gy.data().chunks(plane).enumerate() {
            let o = i % l.out_channels;
            gb[o] = chunk.iter().fold(gb[o], |acc, &v| acc + v);
        }
    }
    let w = params.expect(&weight_name(&l.name));
    let chunk = chunk_samples(n, g.rows(), hw);
    let mut xm = vec![T::zero(); in_len * chunk];
    let mut dcols = vec![T::zero(); g.rows() * chunk * hw];
    let mut dxm = vec![T::zero(); in_len * chunk];
    let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    for b0 in (0..n).step_by(chunk) {
        let nb = chunk.min(n - b0);
        let np = nb * hw;
        let xm = &mut xm[..in_len * nb];
        let dcols = &mut dcols[..g.rows() * np];
        g.im2col(&gy.data()[b0 * out_len..(b0 + nb) * out_len], nb, dcols);
        gather_channel_major(&x.data()[b0 * in_len..(b0 + nb) * in_len], nb, l.in_channels, hw, xm);
        gemm(
            l.in_channels,
            np,
            g.rows(),
            xm,
            Trans::No,
            dcols,
            Trans::Yes,
            T::one(),
            grads.expect_mut(&weight_name(&l.name)).data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            let dxm = &mut dxm[..in_len * nb];
            gemm(l.in_channels, g.rows(), np, w.data(), Trans::No, dcols, Trans::No, T::zero(), dxm);
            scatter_batch_major(dxm, nb, l.in_channels, hw, &mut dx.data_mut()[b0 * in_len..(b0 + nb) * in_len]);
        }
    }
    dx
}

fn maxpool_forward<T: Scalar>(l: &MaxPool1d, x: &Tensor<T>, aux: &mut Vec<u32>) -> Tensor<T> {
    let (n, c, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_len = conv_out_len(len, l.kernel, l.stride, 0).expect("validated at build time");
    let mut y = Vec::with_capacity(n * c * out_len);
    aux.clear();
    aux.reserve(n * c * out_len);
    for (row_i, row) in x.data().chunks(len).enumerate() {
        for o in 0..out_len {
            let start = o * l.stride;
            let mut best = start;
            for i in start + 1..start + l.kernel {
                // strict comparison keeps the lowest index on ties
                if row[i] > row[best] {
                    best = i;
                }
            }
            y.push(row[best]);
            aux.push((row_i * len + best) as u32);
        }
    }
    Tensor::from_vec(&[n, c, out_len], y)
}
