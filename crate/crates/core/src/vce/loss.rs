//! β-weighted evidence lower bound and its gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, sigmoid, GradCheckConfig, GradCheckReport, Gradients, ParamStore, Probe};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::model::{Bottleneck, LatentCode, VceArch, VceNets, LOGVAR_MAX, LOGVAR_MIN, PROB_EPS};

/// `½(μ² + σ² − ln σ² − 1)` for one dimension.
pub fn kl_dim(mu: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    0.5 * (mu * mu + var - var.ln() - 1.0)
}

/// Closed-form `KL[N(μ, diag σ²) ‖ N(0, I)]`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter().zip(sigma).map(|(&m, &s)| kl_dim(m, s)).sum()
}

/// `Σ x ln x̂ + (1 − x) ln(1 − x̂)` with `x̂` clamped to `[1e-6, 1 − 1e-6]`.
pub fn bernoulli_log_likelihood(x: &[f32], x_hat: &[f32]) -> f64 {
    x.iter()
        .zip(x_hat)
        .map(|(&t, &p)| {
            let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            let t = t as f64;
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    /// `recon − β·kl`, the quantity being maximized.
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// ELBO terms for a single image and its reconstruction.
pub fn elbo_loss(x: &[f32], x_hat: &[f32], code: &LatentCode, beta: f64) -> Result<ElboTerms> {
    if x.len() != x_hat.len() {
        return Err(Error::shape(
            "elbo",
            format!("image has {} pixels, reconstruction {}", x.len(), x_hat.len()),
        ));
    }
    let recon = bernoulli_log_likelihood(x, x_hat);
    let mu: Vec<f64> = code.mu.iter().map(|&v| v as f64).collect();
    let sigma: Vec<f64> = code.sigma.iter().map(|&v| v as f64).collect();
    let kl = kl_divergence(&mu, &sigma);
    Ok(ElboTerms {
        total: recon - beta * kl,
        recon,
        kl,
    })
}

/// Neumaier summation; keeps the per-pixel sum accurate enough for
/// finite differences on small gradients.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Batch objective with gradients for every parameter.
pub struct StepOutput<T> {
    /// Minimized: batch mean of `−recon + β·kl`.
    pub loss: f64,
    /// Batch mean reconstruction log-likelihood.
    pub recon: f64,
    /// Batch mean KL (zero for the deterministic bottleneck).
    pub kl: f64,
    pub kl_per_dim: Vec<f64>,
    pub grads: Gradients<T>,
    /// Combined activation signature of encoder, decoder and log-variance clamp.
    pub signature: u64,
}

/// Forward and backward pass of the β-ELBO on a batch.
///
/// `noise` holds the standard-normal draws `α` (`N × d`, row-major);
/// it is ignored for the deterministic bottleneck. The reconstruction
/// gradient uses the fused sigmoid cross-entropy form `x̂ − x` on logits.
pub fn elbo_step<T: Scalar>(
    nets: &VceNets,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    noise: &[T],
    beta: f64,
) -> Result<StepOutput<T>> {
    let n = x.shape()[0];
    let d = nets.arch.latent_dim;
    let variational = nets.arch.bottleneck == Bottleneck::Variational;
    if variational && noise.len() != n * d {
        return Err(Error::shape("reparameterize", format!("noise length {} != {}", noise.len(), n * d)));
    }

    let enc_tape = nets.encoder.forward_train(params, x)?;
    let head = enc_tape.output();
    let (mu, logvar) = nets.split_head(head);
    let half = T::lit(0.5);
    let sigma: Vec<T> = logvar.iter().map(|&lv| (lv * half).exp()).collect();
    let z: Vec<T> = if variational {
        (0..n * d).map(|i| mu[i] + noise[i] * sigma[i]).collect()
    } else {
        mu.clone()
    };

    let dec_tape = nets.decoder.forward_train(params, &Tensor::from_vec(&[n, d], z))?;
    let logits = dec_tape.output();
    let pixels = logits.len() / n;
    let inv_n = T::one() / T::lit(n as f64);
    let mut recon_sum = CompensatedSum::default();
    let mut dlogits = Vec::with_capacity(logits.len());
    for (&l, &t) in logits.data().iter().zip(x.data()) {
        let p = sigmoid(l);
        let pc = p.to_f64().unwrap_or(f64::NAN).clamp(PROB_EPS, 1.0 - PROB_EPS);
        let tf = t.to_f64().unwrap_or(f64::NAN);
        recon_sum.add(tf * pc.ln() + (1.0 - tf) * (1.0 - pc).ln());
        dlogits.push((p - t) * inv_n);
    }
    debug_assert_eq!(pixels * n, x.len());

    let mut kl_per_dim = vec![0.0; d];
    if variational {
        for i in 0..n * d {
            let (m, lv) = (mu[i].to_f64().unwrap_or(f64::NAN), logvar[i].to_f64().unwrap_or(f64::NAN));
            kl_per_dim[i % d] += 0.5 * (m * m + lv.exp() - lv - 1.0);
        }
    }
    kl_per_dim.iter_mut().for_each(|v| *v /= n as f64);
    let kl: f64 = kl_per_dim.iter().sum();
    let recon = recon_sum.total() / n as f64;
    let loss = -recon + if variational { beta * kl } else { 0.0 };

    let mut grads = params.zero_grads();
    let dz = nets
        .decoder
        .backward(params, &dec_tape, Tensor::from_vec(logits.shape(), dlogits), &mut grads, true)
        .expect("input gradient requested");

    let w = nets.arch.head_width();
    let mut dhead = vec![T::zero(); n * w];
    let beta_t = T::lit(beta);
    let mut clamp_sig: u64 = 0;
    for s in 0..n {
        for j in 0..d {
            let i = s * d + j;
            if !variational {
                dhead[s * w + j] = dz.data()[i];
                continue;
            }
            dhead[s * w + j] = dz.data()[i] + beta_t * mu[i] * inv_n;
            let raw = head.data()[s * w + d + j];
            let inside = raw > T::lit(LOGVAR_MIN) && raw < T::lit(LOGVAR_MAX);
            clamp_sig = clamp_sig.wrapping_mul(31).wrapping_add(inside as u64);
            if inside {
                let sg = sigma[i];
                dhead[s * w + d + j] =
                    dz.data()[i] * noise[i] * sg * half + beta_t * half * (sg * sg - T::one()) * inv_n;
            }
        }
    }
    nets.encoder
        .backward(params, &enc_tape, Tensor::from_vec(head.shape(), dhead), &mut grads, false);

    let signature = enc_tape
        .kink_signature(&nets.encoder)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ dec_tape.kink_signature(&nets.decoder)
        ^ clamp_sig.rotate_left(17);
    Ok(StepOutput {
        loss,
        recon,
        kl,
        kl_per_dim,
        grads,
        signature,
    })
}

/// Finite-difference check of [`elbo_step`] on random interior images with
/// fixed reparameterization noise, in 64-bit.
pub fn check_elbo_gradients(
    arch: &VceArch,
    batch: usize,
    beta: f64,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let nets = VceNets::new(arch)?;
    let params: ParamStore<f64> = nets.init_params(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let side = arch.image_side;
    let x = Tensor::from_vec(
        &[batch, 1, side, side],
        (0..batch * side * side).map(|_| rng.gen_range(0.05..0.95)).collect(),
    );
    let noise: Vec<f64> = (0..batch * arch.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut failure = None;
    let report = grad_check(&params, cfg, |p| match elbo_step(&nets, p, &x, &noise, beta) {
        Ok(out) => Probe {
            loss: out.loss,
            grads: out.grads,
            signature: out.signature,
        },
        Err(e) => {
            failure.get_or_insert(e);
            Probe {
                loss: f64::NAN,
                grads: p.zero_grads(),
                signature: 0,
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
