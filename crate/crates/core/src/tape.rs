//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every differentiable operation pushes one node holding its output value
//! and a [`Backward`] rule. [`Tape::backward`] walks the nodes in reverse
//! execution order and accumulates gradients additively across fan-out.

use std::collections::BTreeMap;

use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, in input order. Entries may be `None`
    /// when `needs[i]` is false or the gradient is identically zero.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;

    /// Distance of the inputs from the nearest point where the operation is
    /// not differentiable, for piecewise operations.
    fn kink_distance(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>) -> Option<f64> {
        None
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: Option<Box<dyn Backward<T>>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            rule,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// A leaf that receives a gradient but is not a named parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// A named parameter leaf. Binding the same name twice returns the first
    /// binding, so every parameter owns exactly one gradient slot per tape.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.input(value.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Copies a value into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. The node requires a gradient iff any input does.
    pub fn record(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: impl Backward<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        let rule: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(rule)) } else { None };
        self.push(value, inputs, rule, requires_grad)
    }

    /// Smallest [`Backward::kink_distance`] over all recorded operations,
    /// infinite when none is piecewise.
    pub fn kink_distance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| {
                let rule = n.rule.as_ref()?;
                let inputs: Vec<&Tensor<T>> = n.inputs.iter().map(|&v| self.value(v)).collect();
                rule.kink_distance(&inputs, &n.value)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("loss must hold one element, got shape {seed_shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(seed_shape, vec![T::one()])?);
        let mut visited = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            visited.push(Var(idx));
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let local = rule.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(local.len(), node.inputs.len(), "{} arity", rule.name());
            for ((input, g), need) in node.inputs.iter().zip(local).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape(), "{} grad shape", rule.name());
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients {
            grads,
            visited,
            params: self.params.clone(),
        })
    }
}

pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<Var>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when no path exists.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Operation nodes in the order their backward rules ran.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }

    /// Gradients of every bound parameter, by name. Parameters that did not
    /// influence the loss are omitted.
    pub fn params(&self) -> BTreeMap<String, &Tensor<T>> {
        self.params
            .iter()
            .filter_map(|(name, &v)| self.get(v).map(|g| (name.clone(), g)))
            .collect()
    }
}
