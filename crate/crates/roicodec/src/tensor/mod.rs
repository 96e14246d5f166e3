//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted handles onto tape nodes. Every operation
//! records its inputs and a backward closure; [`Tensor::backward`] runs a
//! reverse topological sweep from a scalar loss and accumulates gradients
//! into every reachable node with `requires_grad`.
//!
//! Values are immutable after creation except through the two sanctioned
//! mutation points: gradient accumulation and in-place parameter updates
//! performed by the optimizer between graph builds.

mod conv;
mod elementwise;
mod linalg;
mod norm;
pub mod scalar;
mod shape_ops;

pub use scalar::Scalar;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables tape recording for the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(false));
        NoGradGuard { prev }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|c| c.set(prev));
    }
}

/// Backward closure: (output gradient, output data, parents).
type BackwardFn<T> = Box<dyn Fn(&[T], &[T], &[Tensor<T>])>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    /// Shared with reshaped views of this tensor.
    data: Rc<RefCell<Vec<T>>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense N-dimensional array participating in a dynamic autodiff tape.
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.node.id,
            self.node.shape,
            self.node.requires_grad
        )
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    // ── Constructors ───────────────────────────────────────────────

    /// Constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel_of(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data: Rc::new(RefCell::new(data)),
                grad: RefCell::new(None),
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Leaf that participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel_of(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data: Rc::new(RefCell::new(data)),
                grad: RefCell::new(None),
                requires_grad: true,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![T::zero(); numel_of(shape)])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![T::one(); numel_of(shape)])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_vec(shape, vec![value; numel_of(shape)])
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    /// Interior node produced by an op. Records parents and the backward
    /// closure only while gradients are enabled and some parent needs them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Self::from_op_shared(shape, Rc::new(RefCell::new(data)), parents, backward)
    }

    /// Like [`Tensor::from_op`] but sharing an existing buffer (zero-copy
    /// views such as reshape).
    pub(crate) fn from_op_shared(
        shape: Vec<usize>,
        data: Rc<RefCell<Vec<T>>>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.borrow().len());
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data,
                grad: RefCell::new(None),
                requires_grad: track,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
            }),
        }
    }

    pub(crate) fn share_data(&self) -> Rc<RefCell<Vec<T>>> {
        Rc::clone(&self.node.data)
    }

    // ── Accessors ──────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub(crate) fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Scalar extraction; panics unless `numel() == 1`.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// In-place overwrite of a leaf's values (optimizer updates, gradient
    /// checking perturbations). Must not be called on interior nodes of a
    /// live graph.
    pub fn set_data(&self, values: &[T]) {
        assert_eq!(values.len(), self.numel(), "set_data length mismatch");
        self.node.data.borrow_mut().copy_from_slice(values);
    }

    pub fn set_value(&self, idx: usize, value: T) {
        self.node.data.borrow_mut()[idx] = value;
    }

    pub fn value_at(&self, idx: usize) -> T {
        self.node.data.borrow()[idx]
    }

    /// Same data, detached from the tape.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(&self.node.shape, self.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.node.data.borrow().iter().all(|v| v.is_finite())
    }

    // ── Backward engine ────────────────────────────────────────────

    pub(crate) fn accumulate_grad(&self, contribution: &[T]) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate across
    /// repeated calls; use [`Tensor::zero_grad`] to reset leaves.
    pub fn backward(&self) -> crate::Result<()> {
        if self.numel() != 1 {
            return Err(crate::Error::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative DFS post-order over the requires_grad subgraph.
        let mut topo: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.node.parents.len() {
                stack.push((node.clone(), child_idx + 1));
                let parent = node.node.parents[child_idx].clone();
                if parent.requires_grad() && !visited.contains(&parent.node.id) {
                    visited.insert(parent.node.id);
                    stack.push((parent, 0));
                }
            } else {
                topo.push(node);
            }
        }

        // Interior grads are scratch state for this sweep; only leaves
        // accumulate across repeated backward calls.
        for node in &topo {
            if node.node.backward.is_some() {
                *node.node.grad.borrow_mut() = None;
            }
        }

        self.accumulate_grad(&[T::one()]);
        for node in topo.iter().rev() {
            let Some(backward) = node.node.backward.as_ref() else {
                continue;
            };
            // parents are always distinct, older nodes; their grad cells
            // never alias this node's, and shared data buffers are only
            // borrowed immutably
            let grad_ref = node.node.grad.borrow();
            let Some(grad) = grad_ref.as_ref() else {
                continue;
            };
            let data_ref = node.node.data.borrow();
            backward(grad, &data_ref, &node.node.parents);
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_square_gradient() {
        // loss = x^2 at x = 3 -> dloss/dx = 6
        let x = Tensor::<f64>::param(&[1], vec![3.0]);
        let loss = x.square();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]);
        let loss = x.square();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let y = x.square();
        assert!(y.backward().is_err());
    }

    #[test]
    fn no_grad_guard_suppresses_tape() {
        let x = Tensor::<f64>::param(&[1], vec![2.0]);
        let _guard = NoGradGuard::new();
        let y = x.square();
        assert!(!y.requires_grad());
    }

    #[test]
    fn affine_backward_is_linear() {
        // loss = sum(gamma * f + beta) -> d/dbeta = ones
        let f = Tensor::<f64>::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]);
        let gamma = Tensor::<f64>::param(&[4], vec![2.0, 2.0, 2.0, 2.0]);
        let beta = Tensor::<f64>::param(&[4], vec![0.0; 4]);
        let loss = gamma.mul(&f).add(&beta).sum_all();
        loss.backward().unwrap();
        assert_eq!(beta.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(gamma.grad().unwrap(), vec![1.0, -2.0, 0.5, 3.0]);
    }
}
