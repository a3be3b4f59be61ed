//! Named parameter storage, gradient accumulation and momentum SGD.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container::{self, ContainerError};
use crate::tape::Gradients;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn merge(&mut self, other: ParamStore<T>) {
        self.tensors.extend(other.tensors);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        container::save_named(path, self.tensors.iter())
    }

    /// Loads a checkpoint; every tensor is converted to `T`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let named = container::load_named(path)?;
        Ok(ParamStore {
            tensors: named.into_iter().map(|(k, v)| (k, v.cast())).collect(),
        })
    }
}

/// He-normal initialization for a tensor whose fan-in is `fan_in`.
pub fn he_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    normal(rng, shape, std)
}

pub fn normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Sums per-example gradients; gradients are added in call order.
#[derive(Debug, Clone, Default)]
pub struct GradAccumulator<T: Scalar = f32> {
    sums: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradAccumulator<T> {
    pub fn new() -> Self {
        GradAccumulator { sums: BTreeMap::new() }
    }

    pub fn add(&mut self, grads: &Gradients<T>, weight: T) {
        for (name, g) in grads.params() {
            match self.sums.get_mut(&name) {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + weight * b;
                    }
                }
                None => {
                    self.sums.insert(name, g.map(|v| v * weight));
                }
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.sums.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Momentum SGD with L2 weight decay:
/// `v <- momentum * v + (g + weight_decay * p)`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar = f32> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: T, weight_decay: T) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has an accumulated gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradAccumulator<T>, lr: T) {
        for (name, g) in &grads.sums {
            let Some(p) = params.get_mut(name) else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv = *pv - lr * *vv;
            }
        }
    }
}

/// Step schedule: `base * factor^floor(epoch / every)`.
pub fn step_lr(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    base * factor.powi((epoch / every.max(1)) as i32)
}
