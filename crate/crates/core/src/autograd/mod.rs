//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable op executed through it, together
//! with whatever the op needs to run its vector-Jacobian product later.
//! [`Tape::backward`] then walks the record in exact reverse order and
//! accumulates gradient contributions additively.

mod ops;
mod params;

pub use params::{Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Reshape { x: Var },
    AddBias { x: Var, bias: Var },
    DepthwiseConv { x: Var, kernels: Var, axis: usize },
    Activation { x: Var, kind: Activation },
    Softmax { x: Var, axis: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, axis: usize, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    Attend { alpha: Var, nodes: Var },
    Mean { x: Var, map: Vec<usize>, count: usize },
    DotConst { x: Var, weights: Vec<T> },
    CrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<usize> },
    BinaryCrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Ordered record of executed ops. Confined to one thread; build a fresh tape
/// per forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation when the tensor is
    /// marked trainable.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.is_trainable();
        self.push_node(tensor, Op::Leaf, needs_grad, None)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push_node(tensor, Op::Leaf, false, None)
    }

    /// Binds a stored parameter as a trainable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.zero_grad();
        self.push_node(value, Op::Leaf, true, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op, needs_grad, param });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_node(value, op, needs_grad, None))
    }

    /// Runs the reverse pass from a single-element `loss` and returns the
    /// gradient of every recorded value that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must hold a single value, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs the reverse pass and accumulates into every parameter bound on this
    /// tape. Parameters unreachable from `loss` receive a zero gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                match grads.get(Var(i)) {
                    Some(g) => store.get_mut(pid).accumulate_grad(g),
                    None => {
                        let zeros = vec![T::zero(); node.value.len()];
                        store.get_mut(pid).accumulate_grad(&zeros);
                    }
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

/// Result of a reverse pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(contrib),
    }
}

/// (outer, len, inner) decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) use ops::{sigmoid, softmax_raw};
pub use ops::{BatchNormStats, BN_EPSILON, BN_MOMENTUM, PROB_CLAMP};
