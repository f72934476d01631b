//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation of one forward pass as a
//! node holding its output value and a local vector-Jacobian rule. Nodes are
//! appended in execution order, so the node list is already topologically
//! sorted and [`Tape::backward`] only has to walk it in reverse.
//!
//! A tape and the values it records belong to one thread. Data parallelism
//! uses one tape per sample.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Local backward rule: receives the output gradient and a mask of which
/// parents need a gradient, returns one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needs one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `tensor` as an input; it receives a gradient iff it requires one.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor::from_parts(tensor.shape().to_vec(), Arc::clone(tensor.shared_data()));
        self.push_node(value, Vec::new(), tensor.requires_grad(), None)
    }

    /// Records `tensor` as a trainable input regardless of its flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor::from_parts(tensor.shape().to_vec(), Arc::clone(tensor.shared_data()));
        self.push_node(value, Vec::new(), true, None)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_node(tensor, Vec::new(), false, None)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    pub(crate) fn shared(&self, var: Var) -> Arc<Vec<f64>> {
        Arc::clone(self.nodes[var.0].value.shared_data())
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        needs_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            needs_grad,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an operation. The backward rule is dropped when
    /// no parent needs a gradient.
    pub(crate) fn record(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let value = Tensor::from_parts(shape, Arc::new(data));
        let backward = needs_grad.then_some(backward);
        self.push_node(value, parents, needs_grad, backward)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if loss_shape != [1] {
            return Err(Error::NotScalar(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(out_grad) = grads[id].as_ref() else {
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].needs_grad)
                .collect();
            let parent_grads = backward(out_grad, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Intermediate gradients are no longer needed once propagated.
            if !self.nodes[id].parents.is_empty() {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds the leaf gradients into `bindings`.
    pub fn backward_into(&self, loss: Var, bindings: &mut [(Var, &mut Tensor)]) -> Result<()> {
        let grads = self.backward(loss)?;
        for (var, tensor) in bindings.iter_mut() {
            if let Some(g) = grads.get(*var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
