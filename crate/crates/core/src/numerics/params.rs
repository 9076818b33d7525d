use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// uniform(-0.1, 0.1)
    Uniform,
    Zeros,
}

/// Named, ordered parameter tensors for one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<f32>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::invalid("parameter names and tensors differ in count"));
        }
        Ok(ParamStore { names, tensors })
    }

    /// Appends a parameter and returns its slot index.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Uniform => (0..n).map(|_| rng.gen_range(-0.1f32..0.1)).collect(),
            Init::Zeros => vec![0.0; n],
        };
        self.names.push(name.to_string());
        self.tensors.push(Tensor::new(shape.to_vec(), data).expect("shape"));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor<f32> {
        &self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape` as a trainable leaf, in slot order.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.cast()))
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| t.cast()).collect()
    }
}

/// Binds an arbitrary-precision parameter list on a tape.
pub fn bind_all<T: Scalar>(tape: &mut Tape<T>, params: &[Tensor<T>]) -> Vec<Var> {
    params
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(i, t.clone()))
        .collect()
}
