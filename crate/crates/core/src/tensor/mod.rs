//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every op that consumes a tensor with `requires_grad` records its parents
//! and a backward rule on the result. [`Tensor::backward`] walks the recorded
//! graph in reverse creation order (a [`Tape`]) and accumulates gradients
//! into the leaves. Node ids are handed out monotonically, so sorting by id
//! is a valid topological order.
//!
//! Tensors are reference counted and not `Send`: a model lives on the thread
//! that built it.

mod conv;
mod linalg;
mod norm;
mod ops;
mod shape;

pub use conv::{conv2d, conv2d_output_size, conv_transpose2d, conv_transpose2d_output_size};
pub use linalg::{gemm, matmul};
pub use norm::{batch_norm, BatchNormMode};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Backward rule: receives the gradient of the output, the output values and
/// the parents; returns one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>>>;

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
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording any op on the graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let previous = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(previous));
    out
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("new", format!("shape {shape:?} holds {expected} values, got {}", data.len())));
        }
        if shape.contains(&0) {
            return Err(Error::shape("new", format!("zero-sized dimension in {shape:?}")));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn from_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![value; n], false)
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Marks a leaf as trainable. Fails on op outputs.
    pub fn requires_grad_(self, flag: bool) -> Result<Self> {
        self.set_requires_grad(flag)?;
        Ok(self)
    }

    pub fn set_requires_grad(&self, flag: bool) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::contract("requires_grad can only be toggled on leaf tensors"));
        }
        self.0.requires_grad.set(flag);
        Ok(())
    }

    /// Records an op output. Gradient tracking switches on when any parent
    /// tracks gradients and recording is enabled.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(true),
            parents,
            backward: Some(backward),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Direct write access, used by optimizers and buffer updates. Writing
    /// into a tensor that is part of a live graph invalidates its gradients.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::shape("set_data", format!("expected {} values, got {}", data.len(), values.len())));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// A new leaf holding a copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from a single-element loss. Leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", self.shape())));
        }
        Tape::record(self).run(self);
        Ok(())
    }
}

/// Nodes reachable from a loss in creation (topological) order.
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    pub fn record(root: &Tensor) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            stack.extend(t.0.parents.iter().cloned());
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.nodes.iter().map(Tensor::id).collect()
    }

    /// Every recorded node appears after all of its tracked inputs.
    pub fn is_topological(&self) -> bool {
        let position: HashMap<u64, usize> = self.nodes.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, t)| t.0.parents.iter().filter_map(|p| position.get(&p.id())).all(|&j| j < i))
    }

    fn run(&self, root: &Tensor) {
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(root.id(), vec![1.0; root.numel()]);
        for node in self.nodes.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else { continue };
            match &node.0.backward {
                None => node.accumulate_grad(&g),
                Some(rule) => {
                    let out = node.0.data.borrow();
                    let parent_grads = rule(&g, &out, &node.0.parents);
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(&[2, 3], vec![0.0; 5]), Err(Error::Shape { .. })));
        let s = Tensor::scalar(3.0);
        assert_eq!(s.ndim(), 0);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn backward_of_identity_is_one() {
        let x = Tensor::scalar(4.0).requires_grad_(true).unwrap();
        x.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn sum_of_doubled_input() {
        let x = Tensor::new(&[3], vec![1.0, -2.0, 5.0]).unwrap().requires_grad_(true).unwrap();
        let loss = x.mul_scalar(2.0).sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::new(&[2], vec![0.3, -0.7]).unwrap().requires_grad_(true).unwrap();
        x.add(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn second_backward_accumulates() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().requires_grad_(true).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().requires_grad_(true).unwrap();
        assert!(matches!(x.exp().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_is_topological() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().requires_grad_(true).unwrap();
        let y = x.exp().mul(&x).unwrap().tanh();
        let loss = y.add(&x).unwrap().sum();
        let tape = Tape::record(&loss);
        assert_eq!(tape.len(), 6);
        assert!(tape.is_topological());
        let ids = tape.ids();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().requires_grad_(true).unwrap();
        let y = no_grad(|| x.exp());
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(grad_enabled());
    }

    #[test]
    fn requires_grad_only_on_leaves() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap().requires_grad_(true).unwrap();
        assert!(x.exp().set_requires_grad(false).is_err());
    }
}
