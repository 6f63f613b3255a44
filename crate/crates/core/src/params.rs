//! Named parameter storage and graph binding.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: value.detach(),
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Replace a parameter's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "param set",
                lhs: slot.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.value = value.detach();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Attach every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound<T> {
        Bound {
            leaves: self.params.iter().map(|p| g.leaf(&p.value)).collect(),
        }
    }

    /// Values without graph membership, for evaluation-only passes.
    pub fn detached(&self) -> Bound<T> {
        Bound {
            leaves: self.params.iter().map(|p| p.value.detach()).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameters as seen by one graph.
#[derive(Clone, Debug)]
pub struct Bound<T> {
    leaves: Vec<Tensor<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.leaves[id.0]
    }

    /// Substitute a different tensor for one parameter (e.g. an externally
    /// optimized leaf).
    pub fn replace(&mut self, id: ParamId, t: Tensor<T>) {
        self.leaves[id.0] = t;
    }

    /// Per-parameter gradients in store order (zero when unreached).
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.leaves.iter().map(|l| grads.wrt(l)).collect()
    }
}
