use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::layers::Layer;
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A feed-forward stack whose shape chain is validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by [`Network::forward_train`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    acts: Vec<Tensor<T>>,
    aux: Vec<Vec<u32>>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("tape holds at least the input")
    }

    /// Hash of every ReLU on/off pattern and max-pool argmax. Two forward
    /// passes with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self, net: &Network) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Relu => {
                    for v in self.acts[i].data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Layer::MaxPool1d(_) => self.aux[i].hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

impl Network {
    pub fn new(name: impl Into<String>, input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        let name = name.into();
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.to_vec());
        for layer in &layers {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| match e {
                    Error::Shape { layer, message } => Error::Shape {
                        layer: format!("{name}/{layer}"),
                        message,
                    },
                    other => other,
                })?;
            shapes.push(next);
        }
        Ok(Network {
            name,
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Per-sample shape after each layer, starting with the input.
    pub fn shape_chain(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for layer in &self.layers {
            layer.init_params(store, rng)?;
        }
        Ok(())
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                self.name.clone(),
                format!("expected batch of {:?}, got {:?}", self.input_shape, x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut aux = Vec::new();
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(params, &cur, &mut aux);
        }
        Ok(cur)
    }

    pub fn forward_train<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tape<T>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux_all = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let mut aux = Vec::new();
            let y = layer.forward(params, acts.last().expect("non-empty"), &mut aux);
            acts.push(y);
            aux_all.push(aux);
        }
        Ok(Tape { acts, aux: aux_all })
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when requested.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &Tape<T>,
        grad_out: Tensor<T>,
        grads: &mut Gradients<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match layer.backward(params, &tape.acts[i], &tape.acts[i + 1], &tape.aux[i], &g, grads, need) {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }
}
