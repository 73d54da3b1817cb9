//! Dense `f64` tensors, tape-based reverse-mode autodiff and momentum SGD.

mod graph;
mod optim;
mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, OptimizerState};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient produced by {op}")]
    NonFiniteGradient { op: &'static str },
}

impl NumericError {
    /// NaN/Inf encountered in the forward or backward pass.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            NumericError::NonFinite { .. } | NumericError::NonFiniteGradient { .. }
        )
    }
}

/// Ordered, named trainable parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a gradient-receiving leaf, in order.
    pub fn register(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| graph.param(t.clone()))
            .collect()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) initialisation.
pub fn init_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
