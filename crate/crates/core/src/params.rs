//! Named, ordered parameter collections.
//!
//! Order is insertion order and is part of the contract: the optimizer's
//! moment buffers, gradient vectors and checkpoint files all index into it.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
#[error("duplicate parameter name {0:?}")]
pub struct DuplicateName(pub String);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<(), DuplicateName> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(DuplicateName(name));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Extends with another set under a `prefix/` namespace.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet<S>) -> Result<(), DuplicateName> {
        for (name, tensor) in other.iter() {
            self.push(format!("{prefix}/{name}"), tensor.clone())?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}
