//! Minimal n-dimensional tensor library with reverse-mode automatic
//! differentiation.
//!
//! [`Tensor`] is a plain immutable value (shareable across threads).
//! Differentiation happens on a per-thread tape: a [`Graph`] owns the
//! recorded operations, [`Value`] is a tensor tracked by a graph, and
//! [`Value::backward`] on a scalar loss yields [`Gradients`] for every
//! reachable variable. Nodes only ever reference earlier nodes, so the
//! recorded graph is acyclic by construction.

mod ops;

pub use ops::conv2d;

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// An immutable n-dimensional array of `f32` samples.
///
/// Image tensors use channels-height-width order, with an optional leading
/// batch extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; numel]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_vec(vec![1], vec![value]).unwrap()
    }

    /// Glorot-uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; copies only if the buffer is shared.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// The single element of a scalar-shaped tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Interprets the shape as `(batch, channels, height, width)`, treating
    /// rank-3 tensors as batch 1.
    pub(crate) fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((1, *c, *h, *w)),
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            other => Err(Error::ShapeMismatch(format!(
                "expected rank 3 or 4 image tensor, got shape {other:?}"
            ))),
        }
    }
}

/// Learnable convolution weights: `kernel` is `[out_c, in_c, kh, kw]`,
/// `bias` is `[out_c]`.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Glorot-initialized kernel, zero bias.
    pub fn init(
        out_c: usize,
        in_c: usize,
        ksize: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * ksize * ksize;
        let fan_out = out_c * ksize * ksize;
        Self {
            kernel: Tensor::glorot(vec![out_c, in_c, ksize, ksize], fan_in, fan_out, rng),
            bias: Tensor::zeros(vec![out_c]),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
}

pub(crate) type BackFn = Box<dyn Fn(&[f32], &mut GradStore)>;

pub(crate) struct Node {
    len: usize,
    /// True when a gradient can flow from this node to some variable.
    live: bool,
    back: Option<BackFn>,
}

/// Per-node gradient accumulators used during a backward pass.
pub struct GradStore {
    slots: Vec<Option<Vec<f32>>>,
}

impl GradStore {
    /// Accumulator slot for node `id`, zero-initialized on first access.
    pub(crate) fn slot(&mut self, id: usize, len: usize) -> &mut [f32] {
        self.slots[id].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Gradients harvested by a backward pass, keyed by graph node.
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, if `v` is a variable the loss
    /// reaches.
    pub fn get(&self, v: &Value) -> Option<&[f32]> {
        self.slots.get(v.id).and_then(|s| s.as_deref())
    }

    /// Element-wise sum with another gradient set from the same graph
    /// layout; opts into cross-pass accumulation.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => {
                    for (a, b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
                (None, Some(s)) => *dst = Some(s.clone()),
                _ => {}
            }
        }
    }
}

struct GraphInner {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// A differentiation tape. Owned by one logical thread from forward
/// through backward; create a fresh graph per training step.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<GraphInner>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(GraphInner {
                nodes: RefCell::new(Vec::new()),
                consumed: Cell::new(false),
            }),
        }
    }

    fn push(&self, len: usize, live: bool, back: Option<BackFn>) -> usize {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(Node { len, live, back });
        nodes.len() - 1
    }

    /// Tracks a tensor as a trainable variable: its gradient is retained.
    pub fn var(&self, t: &Tensor) -> Value {
        let id = self.push(t.numel(), true, None);
        Value {
            graph: self.clone(),
            id,
            tensor: t.clone(),
        }
    }

    /// Tracks a tensor as a constant: gradients do not flow into it.
    pub fn constant(&self, t: &Tensor) -> Value {
        let id = self.push(t.numel(), false, None);
        Value {
            graph: self.clone(),
            id,
            tensor: t.clone(),
        }
    }

    fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// A tensor tracked by a [`Graph`].
#[derive(Clone)]
pub struct Value {
    graph: Graph,
    id: usize,
    tensor: Tensor,
}

impl Value {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn item(&self) -> f32 {
        self.tensor.item()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Same data, detached from gradient flow.
    pub fn detach(&self) -> Value {
        self.graph.constant(&self.tensor)
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn live(&self) -> bool {
        self.graph.inner.nodes.borrow()[self.id].live
    }

    pub(crate) fn check_same_graph(&self, other: &Value) -> Result<()> {
        if self.graph.same_as(&other.graph) {
            Ok(())
        } else {
            Err(Error::GraphMismatch)
        }
    }

    pub(crate) fn new_from_op(
        &self,
        tensor: Tensor,
        live: bool,
        back: Option<BackFn>,
    ) -> Value {
        let id = self.graph.push(tensor.numel(), live, back);
        Value {
            graph: self.graph.clone(),
            id,
            tensor,
        }
    }

    /// Reverse pass from a scalar loss. Populates gradients for every
    /// variable the loss reaches; consumes the graph (a second backward
    /// on the same graph is an error).
    pub fn backward(&self) -> Result<Gradients> {
        if self.tensor.numel() != 1 {
            return Err(Error::NonScalarLoss(self.tensor.shape().to_vec()));
        }
        if self.graph.inner.consumed.replace(true) {
            return Err(Error::GraphConsumed);
        }
        let nodes = self.graph.inner.nodes.borrow();
        let mut store = GradStore {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        store.slots[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if node.back.is_none() {
                continue; // leaf: retain its accumulated gradient
            }
            if let Some(grad) = store.slots[id].take() {
                debug_assert_eq!(grad.len(), node.len);
                (node.back.as_ref().unwrap())(&grad, &mut store);
            }
        }
        Ok(Gradients { slots: store.slots })
    }
}
