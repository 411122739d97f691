use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam hyperparameters. Weight decay is decoupled from the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

/// Named parameters plus per-parameter Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: IndexMap<String, Tensor<T>>,
    adam: IndexMap<String, AdamState<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
            adam: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Panics if missing: layers only look up names they registered.
    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn adam_state(&self, name: &str) -> Option<&AdamState<T>> {
        self.adam.get(name)
    }

    /// Zero-valued gradient buffers with this store's names and shapes.
    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            grads: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.norm().to_f64().unwrap_or(f64::NAN)))
            .collect()
    }

    /// Same parameters converted to another precision (moments dropped).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            adam: IndexMap::new(),
        }
    }

    /// Copy parameter values (not optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) {
        for (k, v) in self.params.iter_mut() {
            if let Some(src) = other.params.get(k) {
                v.data_mut().copy_from_slice(src.data());
            }
        }
    }

    pub fn without_optimizer_state(&self) -> Self {
        ParamStore {
            params: self.params.clone(),
            adam: IndexMap::new(),
        }
    }

    /// One Adam update over every parameter.
    ///
    /// With zero gradients and zero weight decay the parameters are left
    /// untouched. A non-finite gradient aborts before anything is modified.
    pub fn adam_step(&mut self, grads: &Gradients<T>, cfg: &AdamConfig) -> Result<()> {
        for (name, p) in &self.params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    name.clone(),
                    format!("gradient shape {:?} != parameter shape {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter `{name}`"
                )));
            }
        }

        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let eps = T::lit(cfg.eps);
        let lr = T::lit(cfg.lr);
        let wd = T::lit(cfg.weight_decay);
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            let st = self
                .adam
                .entry(name.clone())
                .or_insert_with(|| AdamState {
                    m: Tensor::zeros(p.shape()),
                    v: Tensor::zeros(p.shape()),
                    step: 0,
                });
            st.step += 1;
            let t = st.step as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                let update = m_hat / (v_hat.sqrt() + eps) + wd * *w;
                *w = *w - lr * update;
            }
        }
        Ok(())
    }
}

/// Gradient buffers keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    grads: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn expect_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.grads
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient buffer `{name}` not allocated"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(T::zero()));
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.grads
            .iter()
            .find(|(_, g)| !g.all_finite())
            .map(|(k, _)| k.as_str())
    }
}
