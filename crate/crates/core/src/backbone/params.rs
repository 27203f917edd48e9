use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::numerics::{Real, Tensor};

/// Ordered, named parameter arrays. Tensors are reference-counted so they
/// can be bound to a tape without copying; mutation copies on write only if
/// a tape still holds them.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<S>>>,
    index: HashMap<String, usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> usize {
        let name = name.into();
        let i = self.names.len();
        assert!(
            self.index.insert(name.clone(), i).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name);
        self.tensors.push(Arc::new(tensor));
        i
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).map(|i| self.get(i))
    }

    pub(crate) fn shared(&self) -> &[Arc<Tensor<S>>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }
}

pub(crate) fn uniform<S: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// Xavier-uniform for a `[fan_in, fan_out]` projection.
pub(crate) fn xavier<S: Real, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    uniform(shape, bound, rng)
}
