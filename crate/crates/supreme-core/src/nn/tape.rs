//! Reverse-mode differentiation over a recorded op graph.
//!
//! A forward pass pushes one node per op onto a tape; each node owns its
//! output value and a closure that maps the output gradient to contributions
//! for its parents. `backward` walks the tape in reverse creation order, so
//! gradient accumulation order is fixed and runs are reproducible.

use super::tensor::{Element, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn<E> = Box<dyn Fn(&Tensor<E>, &mut dyn FnMut(Var, Tensor<E>))>;

struct Node<E> {
    value: Tensor<E>,
    backward: Option<BackFn<E>>,
}

pub struct Tape<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// A differentiable input (parameter or anything a gradient is wanted for).
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(value, None)
    }

    /// A non-differentiable input. Gradients flowing into it are dropped by
    /// virtue of nobody reading them.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<E>, backward: Option<BackFn<E>>) -> Var {
        // NaN or Inf leaking out of any op is a bug, not data; catch it at the
        // source in debug builds.
        debug_assert!(value.all_finite(), "non-finite value produced by an op");
        self.nodes.push(Node { value, backward });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of `root` (a scalar) with respect to every tape node.
    pub fn backward(&self, root: Var) -> Gradients<E> {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(E::one()));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &self.nodes[id].backward {
                back(&g, &mut |parent: Var, contrib: Tensor<E>| {
                    debug_assert!(parent.0 < id, "backward edge must point to an earlier node");
                    match &mut grads[parent.0] {
                        Some(acc) => *acc = acc.zip(&contrib, |a, b| a + b),
                        slot @ None => *slot = Some(contrib),
                    }
                });
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Tape::new()
    }
}

pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient w.r.t. `v`, or None if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
