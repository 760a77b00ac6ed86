//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to tracked [`Var`]s in
//! execution order, so node ids are already a topological order: inputs are
//! always recorded before the operations consuming them. [`Tape::backward`]
//! walks the record in reverse and accumulates vector-Jacobian products.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Vector-Jacobian product of one node: given the output gradient and a mask
/// of which inputs need a gradient, returns one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    inputs: Vec<Option<usize>>,
    /// `None` marks a leaf.
    backward: Option<BackwardFn<T>>,
    shape: Vec<usize>,
}

pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    consumed: Cell<bool>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape that records nothing; intermediates are freed as soon as their
    /// `Var`s go out of scope.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a tensor that requires a gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let value = value.detached();
        let node = if self.recording {
            Some(self.push(Node {
                inputs: Vec::new(),
                backward: None,
                shape: value.shape().to_vec(),
            }))
        } else {
            None
        };
        Var {
            tape: self,
            value: Rc::new(value),
            node,
        }
    }

    /// Registers a tensor that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            value: Rc::new(value.detached()),
            node: None,
        }
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Records an operation whose value has already been computed.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.node).collect();
        let tracked = self.recording && ids.iter().any(Option::is_some);
        let node = if tracked {
            Some(self.push(Node {
                inputs: ids,
                backward: Some(backward),
                shape: value.shape().to_vec(),
            }))
        } else {
            None
        };
        Var {
            tape: self,
            value: Rc::new(value),
            node,
        }
    }

    /// Back-propagates from a scalar loss.
    ///
    /// Every leaf on the tape gets an entry in the result, zero-filled when
    /// the loss does not depend on it. A tape can be back-propagated once;
    /// [`Tape::reset`] clears it for reuse.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::TapeMismatch);
        }
        if loss.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.value.shape().to_vec()));
        }
        if self.consumed.get() {
            return Err(TensorError::AlreadyBackpropagated);
        }
        self.consumed.set(true);

        let nodes = self.nodes.borrow();
        let mut leaves = HashMap::new();
        if let Some(root) = loss.node {
            let mut pending: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
            pending[root] = Some(Tensor::ones(loss.value.shape()));
            for id in (0..=root).rev() {
                let Some(grad) = pending[id].take() else {
                    continue;
                };
                let node = &nodes[id];
                let Some(backward) = &node.backward else {
                    leaves.insert(id, grad);
                    continue;
                };
                let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
                let input_grads = backward(&grad, &needs);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (input, g) in node.inputs.iter().zip(input_grads) {
                    let (Some(pid), Some(g)) = (input, g) else {
                        continue;
                    };
                    debug_assert_eq!(g.shape(), nodes[*pid].shape.as_slice());
                    match &mut pending[*pid] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a = *a + *b;
                            }
                        }
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_none() {
                leaves
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(&node.shape));
            }
        }
        Ok(Gradients { by_node: leaves })
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.consumed.set(false);
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("recording", &self.recording)
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    by_node: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to a leaf.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.by_node.get(&id))
    }

    pub fn take(&mut self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        var.node.and_then(|id| self.by_node.remove(&id))
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

/// A tensor value living on a tape.
#[derive(Clone)]
pub struct Var<'t, T: Element> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) node: Option<usize>,
}

impl<'t, T: Element> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Whether gradients flow through this value.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of the value, cut from the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        self.value.detached()
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::TapeMismatch)
        }
    }
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}
