use std::collections::HashMap;

use super::real::Real;
use super::tensor::Tensor;
use super::NumError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NumError> {
        if self.index.contains_key(name) {
            return Err(NumError::DuplicateParam(name.to_string()));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = T::zero();
            }
        }
    }

    /// Adds gradients produced by a backward pass into the grad buffers.
    pub fn accumulate(&mut self, grads: &super::graph::Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.param(ParamId(i)) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> T {
        self.params.iter().map(|p| p.grad.sum_squares()).sum::<T>().sqrt()
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    /// Converts every value to another precision (grads reset to zero).
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast()).expect("names already unique");
        }
        out
    }

    /// Replaces a parameter's value, keeping its name; grad is resized.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.shape());
        p.value = value;
    }
}
