//! Minimal dense-tensor engine with reverse-mode automatic
//! differentiation, sized for training the toy denoiser and decoder.
//!
//! Tensors are immutable once a forward pass has constructed them; only
//! gradient buffers (filled by [`backward`]) and leaf parameter values
//! (written by the optimizer between steps) change. The computation
//! graph is rebuilt on every forward pass: each op stores its parents
//! plus a closure that routes the output gradient back to them.
//! Reductions and matrix products accumulate in 64-bit arithmetic and
//! store 32-bit results.

mod adam;
mod ops;

pub use adam::{AdamState, NamedParams};
pub use ops::{primitive_forward, OpKind};

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        shape: Vec<usize>,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("embedding lookup: id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: u32, rows: usize },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradient routing closure: receives the output gradient and adds each
/// parent's contribution into that parent's grad buffer.
type BackwardFn = Box<dyn Fn(&[f32])>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense row-major f32 tensor with an optional gradient slot.
///
/// Cloning is cheap (shared handle); two clones refer to the same
/// storage and gradient buffer.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::new_node(shape.to_vec(), data, false, vec![], None))
    }

    /// Leaf parameter: participates in gradients.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::new_node(shape.to_vec(), data, true, vec![], None))
    }

    /// Leaf input that requires a gradient but is not a parameter
    /// (used for gradient checks w.r.t. network inputs).
    pub fn input(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        Tensor::param(data, shape)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_node(shape.to_vec(), vec![0.0; n], false, vec![], None)
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::new_node(vec![], vec![v], false, vec![], None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Scalar extraction; panics if the tensor is not a single element.
    pub fn item(&self) -> f32 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrites the stored values. Only meaningful for leaves, between
    /// forward passes (optimizer updates, checkpoint restore).
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(TensorError::DataLength {
                len: values.len(),
                shape: self.0.shape.to_vec(),
            });
        }
        self.0.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// The accumulated gradient, or `None` if backward has not touched
    /// this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    /// Gradient with the convention that an untouched leaf has zero
    /// gradient (no path from the loss).
    pub fn grad_or_zeros(&self) -> Vec<f32> {
        self.0
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn is_scalar_shape(&self) -> bool {
        self.numel() == 1 && self.0.shape.len() <= 1
    }
}

/// Reverse-mode sweep from a scalar loss. Fills the grad buffer of every
/// tensor the loss depends on; accumulation is additive across uses, so
/// call [`Tensor::zero_grad`] on parameters between steps.
pub fn backward(loss: &Tensor) -> Result<()> {
    if !loss.is_scalar_shape() {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    if !loss.requires_grad() {
        return Ok(()); // nothing recorded, nothing to do
    }
    let order = topo_order(loss);
    loss.accumulate_grad(&[1.0]);
    for node in order.iter().rev() {
        if let Some(back) = &node.0.backward {
            // Every non-leaf in the order has received its full gradient by
            // now (all children precede it in reverse topological order).
            let grad = node.0.grad.borrow().clone();
            if let Some(g) = grad {
                back(&g);
            }
        }
    }
    Ok(())
}

/// Post-order DFS over recorded parents; deterministic for a fixed graph.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // (tensor, parents_pushed)
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.0.id) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in node.0.parents.iter().rev() {
            if p.requires_grad() && !visited.contains(&p.0.id) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests;
