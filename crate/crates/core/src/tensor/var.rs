//! Reverse-mode differentiation over [`DenseTensor`] values.
//!
//! Every operation on a [`Var`] records its inputs and a backward closure.
//! Nodes receive monotonically increasing ids at creation, so sorting the
//! reachable nodes by descending id yields a valid reverse topological order
//! for [`Var::backward`].
//!
//! Gradients are stored only on leaves (variables created with
//! [`Var::leaf`]); interior gradients live in a scratch map for the duration
//! of one backward pass. Leaf gradients accumulate across calls until
//! [`Var::zero_grad`] clears them.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::DenseTensor;
use crate::error::{Error, Result};

/// Backward rule: given the output gradient, the output value and the inputs,
/// return one optional gradient per input (in input order).
pub type BackwardFn = Box<dyn Fn(&DenseTensor, &DenseTensor, &[Var]) -> Vec<Option<DenseTensor>>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any backward information on this thread.
///
/// Intermediate values are dropped as soon as their handles go out of scope,
/// which keeps inference memory proportional to the live working set.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    id: u64,
    value: DenseTensor,
    grad: RefCell<Option<DenseTensor>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A differentiable tensor handle. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn make(
        value: DenseTensor,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad: RefCell::new(None),
            parents,
            backward,
            requires_grad,
        }))
    }

    /// A trainable leaf whose gradient is retained after backward.
    pub fn leaf(value: DenseTensor) -> Self {
        Self::make(value, Vec::new(), None, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(value: DenseTensor) -> Self {
        Self::make(value, Vec::new(), None, false)
    }

    /// Record the result of an operation.
    ///
    /// When gradients are disabled or no input needs one, the result is a
    /// plain constant and `backward` is discarded.
    pub fn from_op(value: DenseTensor, inputs: &[&Var], backward: BackwardFn) -> Self {
        let tracked = grad_enabled() && inputs.iter().any(|v| v.requires_grad());
        if tracked {
            let parents = inputs.iter().map(|&v| v.clone()).collect();
            Self::make(value, parents, Some(backward), true)
        } else {
            Self::make(value, Vec::new(), None, false)
        }
    }

    /// Whether this node participates in gradient propagation.
    pub fn tracks_grad(&self) -> bool {
        self.requires_grad() && grad_enabled()
    }

    pub fn value(&self) -> &DenseTensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<DenseTensor> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Propagate gradients from this one-element root to every reachable leaf.
    pub fn backward(&self) -> Result<()> {
        if self.value().len() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, DenseTensor> = HashMap::new();
        pending.insert(
            self.id(),
            DenseTensor::from_parts_unchecked(self.shape().to_vec(), vec![1.0]),
        );

        for node in order {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&g)?,
                        None => *slot = Some(g),
                    }
                }
                Some(rule) => {
                    let grads = rule(&g, &node.0.value, &node.0.parents);
                    debug_assert_eq!(grads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), parent.shape());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.add_assign(&pg)?,
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
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
    fn non_scalar_root_is_rejected() {
        let x = Var::leaf(DenseTensor::ones(&[2]).unwrap());
        assert!(matches!(x.backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn no_grad_produces_constants() {
        let x = Var::leaf(DenseTensor::ones(&[3]).unwrap());
        let y = no_grad(|| x.sum());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let x = Var::leaf(DenseTensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let y = x.sum();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subexpression_sums_both_paths() {
        let x = Var::leaf(DenseTensor::new(vec![1], vec![3.0]).unwrap());
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[7.0]);
    }
}
