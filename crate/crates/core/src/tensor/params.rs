use std::collections::HashMap;

use super::{Float, Result, Tensor, TensorError};

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, iterated in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `tensor` under `name`; the tensor becomes trainable.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name:?}")));
        }
        tensor.set_requires_grad(true);
        let id = ParamId(self.tensors.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `grads` into the parameters' gradient slots.
    pub fn accumulate(&mut self, grads: &ParamGradients) {
        for (id, g) in &grads.entries {
            let slot = self.tensors[id.0].grad_mut().expect("parameters always carry a grad slot");
            for (s, v) in slot.iter_mut().zip(g) {
                *s += *v;
            }
        }
    }

    /// Replaces the values of parameter `id`, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[Float]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.numel() != values.len() {
            return Err(TensorError::Dimension {
                op: "set_values",
                detail: format!("{} expects {} values, got {}", self.names[id.0], t.numel(), values.len()),
            });
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}

/// Gradients of a loss with respect to the parameters that reached it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGradients {
    pub(crate) entries: Vec<(ParamId, Vec<Float>)>,
}

impl ParamGradients {
    pub fn get(&self, id: ParamId) -> Option<&[Float]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[Float])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    pub fn scale(&mut self, k: Float) {
        for (_, g) in &mut self.entries {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }
}
