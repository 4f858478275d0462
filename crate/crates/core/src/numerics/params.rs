use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{Gradients, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    /// Accumulated gradient; `None` means all zeros.
    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn scale_grad(&mut self, factor: T) {
        if let Some(g) = &mut self.grad {
            for v in g.data_mut() {
                *v = *v * factor;
            }
        }
    }

    /// Accumulated gradient, materialized as zeros if nothing was accumulated.
    pub fn grad_or_zeros(&self) -> Tensor<T> {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }
}

/// Ordered parameters of one model; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: String, value: Tensor<T>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(alloc::format!("duplicate parameter name '{name}'")));
        }
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn by_index(&self, index: usize) -> &Parameter<T> {
        &self.params[index]
    }

    pub fn by_index_mut(&mut self, index: usize) -> &mut Parameter<T> {
        &mut self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Places a parameter on the tape.
    pub fn var(&self, tape: &mut Tape<T>, id: ParamId) -> Var<T> {
        tape.param(id.0, &self.params[id.0].value)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().fill(T::zero());
            }
        }
    }

    /// Adds gradients from a backward pass into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (index, g) in grads.params() {
            let p = &mut self.params[index];
            let acc = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + v;
            }
        }
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, index: usize, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[index];
        if p.value.shape() != value.shape() {
            return Err(Error::TensorShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: None,
                })
                .collect(),
        }
    }
}
