//! Grad-tracking tensors and the reverse-mode pass over their graph.
//!
//! A [`Tensor`] is an immutable, reference-counted block of `f64` values in
//! row-major order. Every operation that consumes a tensor which requires a
//! gradient records a backward closure on its output; [`Tensor::backward`]
//! walks those closures in reverse creation order and deposits gradients on
//! leaves (and on any intermediate marked with [`Tensor::retain_grad`]).
//!
//! The graph uses `Rc`, so one forward/backward pass lives on one thread.
//! Learnable weights are kept as plain vectors elsewhere and turned into
//! leaves per pass.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Maps the upstream gradient to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    retain_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish_non_exhaustive()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                retain_grad: Cell::new(false),
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    fn checked_leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor::build(shape.to_vec(), data, requires_grad, None))
    }

    /// A leaf that does not take part in differentiation.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::checked_leaf(shape, data, false)
    }

    /// A leaf whose gradient is collected by [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::checked_leaf(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::constant(shape, vec![0.0; numel(shape)])
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::constant(&[1], vec![value])
    }

    /// Output of an operation. The backward closure is dropped when no
    /// parent requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), data.len(), "{op} produced a mis-sized buffer");
        if !all_finite(&data) {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node { parents, backward });
        Ok(Tensor::build(shape, data, requires_grad, node))
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.inner.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(
                "item",
                format!("expected one element, shape {:?}", self.shape()),
            )),
        }
    }

    /// Keep the gradient of this intermediate after `backward`.
    pub fn retain_grad(&self) {
        self.inner.retain_grad.set(true);
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f64>>> {
        let g = self.inner.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    /// Gradient copied out, or zeros if none has been accumulated.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Reverse-mode pass from a one-element loss. Gradients accumulate into
    /// whatever is already stored on the receiving tensors.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Children are always created after their parents, so descending
        // id order is a valid reverse topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.inner.id) {
                continue;
            }
            if let Some(node) = &t.inner.node {
                stack.extend(node.parents.iter().cloned());
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.inner.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.inner.id, vec![1.0]);

        for t in &order {
            let Some(upstream) = pending.remove(&t.inner.id) else {
                continue;
            };
            if t.is_leaf() || t.inner.retain_grad.get() {
                let mut slot = t.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, g)| *a += g),
                    None => *slot = Some(upstream.clone()),
                }
            }
            let Some(node) = &t.inner.node else {
                continue;
            };
            let parent_grads = (node.backward)(&upstream);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, grad) in node.parents.iter().zip(parent_grads) {
                let Some(grad) = grad else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                if !all_finite(&grad) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                match pending.get_mut(&parent.inner.id) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => {
                        pending.insert(parent.inner.id, grad);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_extents() {
        assert!(Tensor::constant(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::constant(&[0, 2], vec![]).is_err());
        assert!(matches!(
            Tensor::constant(&[1], vec![f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Shape { .. })));
    }

    #[test]
    fn sum_gives_ones_and_accumulates() {
        let x = Tensor::param(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 4.0, -7.0]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vec![1.0; 6]);
        loss.backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vec![2.0; 6]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn half_squared_norm_gives_x() {
        let vals = vec![0.3, -1.2, 4.0, 2.5];
        let x = Tensor::param(&[4], vals.clone()).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap().scale(0.5).unwrap();
        loss.backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vals);
    }

    #[test]
    fn retained_intermediate_gets_gradient() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(3.0).unwrap();
        y.retain_grad();
        y.mul(&y).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(*y.grad().unwrap(), vec![6.0, 12.0]);
        assert_eq!(*x.grad().unwrap(), vec![18.0, 36.0]);
    }

    #[test]
    fn constants_get_no_graph() {
        let a = Tensor::constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.scale(2.0).unwrap();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }
}
