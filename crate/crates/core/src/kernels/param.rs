use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Gradients, Graph, Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

fn next_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Named, ordered collection of trainable tensors.
///
/// Every store (including clones) carries a distinct id so one graph can
/// read parameters from several stores without confusing them.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Clone> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self { uid: next_uid(), params: self.params.clone(), by_name: self.by_name.clone() }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: next_uid(), params: Vec::new(), by_name: HashMap::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.clone(), value, grad });
        self.by_name.insert(name, id);
        Ok(id)
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

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the gradients of every parameter leaf in `graph` to the stored grads.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>) {
        let buf = self.collect(graph, grads);
        self.apply_buffer(&buf, T::one());
    }

    /// Gathers parameter gradients into a buffer aligned with this store.
    pub fn collect(&self, graph: &Graph<T>, grads: &Gradients<T>) -> GradBuffer<T> {
        let mut buf = GradBuffer::zeros_like(self);
        for (id, var) in graph.param_vars(self.uid) {
            if let Some(g) = grads.get(var) {
                buf.grads[id.0].add_assign(g);
            }
        }
        buf
    }

    /// `grad += scale * buffer`.
    pub fn apply_buffer(&mut self, buf: &GradBuffer<T>, scale: T) {
        for (p, g) in self.params.iter_mut().zip(&buf.grads) {
            for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
    }
}

/// Per-parameter gradient accumulator, reduced in a fixed order across a batch.
#[derive(Debug, Clone)]
pub struct GradBuffer<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { grads: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect() }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }
}
