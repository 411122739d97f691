//! Central finite-difference oracle for analytic gradients (64-bit).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::Layer;
use super::network::Network;
use super::params::{Gradients, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Coordinates sampled per parameter; every coordinate when the tensor is smaller.
    pub samples_per_param: usize,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            samples_per_param: 24,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

/// Value of an objective at one parameter setting.
pub struct Probe {
    pub loss: f64,
    pub grads: Gradients<f64>,
    /// Activation-pattern signature; see [`super::Tape::kink_signature`].
    pub signature: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients from `eval` against central differences.
///
/// Coordinates whose perturbation crosses a ReLU or max-pool kink (the
/// activation signature changes) are excluded and counted separately.
pub fn grad_check<F>(params: &ParamStore<f64>, cfg: &GradCheckConfig, mut eval: F) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> Probe,
{
    let base = eval(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut groups = Vec::with_capacity(names.len());
    for name in names {
        let len = params.expect(&name).len();
        let picks: Vec<usize> = if len <= cfg.samples_per_param {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let analytic = base.grads.get(&name).expect("gradient for every parameter");
        let mut report = GroupReport {
            name: name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_err: 0.0,
        };
        for idx in picks {
            let orig = params.expect(&name).data()[idx];
            work.get_mut(&name).expect("cloned").data_mut()[idx] = orig + cfg.h;
            let plus = eval(&work);
            work.get_mut(&name).expect("cloned").data_mut()[idx] = orig - cfg.h;
            let minus = eval(&work);
            work.get_mut(&name).expect("cloned").data_mut()[idx] = orig;
            if plus.signature != base.signature || minus.signature != base.signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.h);
            let err = relative_error(analytic.data()[idx], numeric, cfg.abs_floor);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
        groups.push(report);
    }
    GradCheckReport { groups }
}

/// Checks one layer in isolation, input included: the layer's parameters and
/// a random input batch are perturbed under a fixed random linear loss.
pub fn check_layer(
    layer: Layer,
    input_shape: &[usize],
    batch: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let net = Network::new("probe", input_shape, vec![layer])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::<f64>::new();
    net.init_params(&mut params, &mut rng)?;
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let n: usize = shape.iter().product();
    params.insert("input", Tensor::from_vec(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))?;
    let out_len = batch * net.output_shape().iter().product::<usize>();
    let proj: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    Ok(grad_check(&params, cfg, |p| {
        let x = p.expect("input").clone();
        let tape = net.forward_train(p, &x).expect("shapes fixed at build");
        let y = tape.output();
        let loss = y.data().iter().zip(&proj).map(|(a, b)| a * b).sum();
        let mut grads = p.zero_grads();
        let gy = Tensor::from_vec(y.shape(), proj.clone());
        let gx = net.backward(p, &tape, gy, &mut grads, true).expect("input gradient requested");
        grads.expect_mut("input").data_mut().copy_from_slice(gx.data());
        Probe {
            loss,
            signature: tape.kink_signature(&net),
            grads,
        }
    }))
}
