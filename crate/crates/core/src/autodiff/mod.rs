//! Reverse-mode differentiation over an append-only operation tape.
//!
//! A [`Graph`] records one forward pass. Leaves are registered with
//! [`Graph::leaf`] or [`Graph::param`]; every primitive appends a node whose
//! inputs already exist, so insertion order is a topological order and
//! [`Graph::backward`] is a single reverse sweep. A graph supports exactly one
//! backward pass; a second call returns [`Error::GraphConsumed`].

mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub use conv::ConvGeometry;
pub use loss::softmax_rows;
pub use norm::BatchStats;

pub(crate) use conv::conv2d_backward;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Kind of a recorded operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2d,
    GlobalAvgPool,
    AdaptiveAvgPool,
    Linear,
    Relu,
    Sigmoid,
    Add,
    Mul,
    MulChannel,
    BatchNorm,
    Reshape,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::MaxPool2d,
        OpKind::GlobalAvgPool,
        OpKind::AdaptiveAvgPool,
        OpKind::Linear,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Add,
        OpKind::Mul,
        OpKind::MulChannel,
        OpKind::BatchNorm,
        OpKind::Reshape,
        OpKind::Sum,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::AdaptiveAvgPool => "adaptive_avg_pool",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::MulChannel => "mul_broadcast_channel",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deliberate corruption of one operation's backward pass, used to prove
/// that gradient checks catch faulty derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub op: OpKind,
    pub scale: f64,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        geom: ConvGeometry,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: usize,
    },
    AdaptiveAvgPool {
        input: usize,
        out_h: usize,
        out_w: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Relu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    MulChannel {
        x: usize,
        s: usize,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Reshape {
        input: usize,
    },
    Sum {
        input: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::AdaptiveAvgPool { .. } => OpKind::AdaptiveAvgPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::MulChannel { .. } => OpKind::MulChannel,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Sum { .. } => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::Linear { input, weight, bias } => std::iter::once(input)
                .chain(std::iter::once(weight))
                .chain(bias)
                .collect(),
            Op::MaxPool2d { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::AdaptiveAvgPool { input, .. }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Reshape { input }
            | Op::Sum { input } => vec![input],
            Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::MulChannel { x, s } => vec![x, s],
            Op::BatchNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Graph<T: Element = f64> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: HashMap<usize, usize>,
    recording: bool,
    consumed: bool,
    fault: Option<Fault>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// A graph that records operations for a backward pass.
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
            recording: true,
            consumed: false,
            fault: None,
        }
    }

    /// A graph that only evaluates; nothing requires grad and `backward` errors.
    pub fn no_grad() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::BackwardWithoutGraph("variable belongs to a different graph"));
        }
        Ok(v.index)
    }

    fn var(&self, index: usize) -> Var {
        Var { graph: self.id, index }
    }

    /// Registers a leaf holding `tensor`'s values. Gradients are tracked when
    /// the tensor requires grad and the graph is recording.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let requires_grad = self.recording && tensor.requires_grad();
        self.nodes.push(Node {
            value: Tensor::from_shared(tensor.shape().clone(), Arc::clone(tensor.shared())),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Registers a parameter. Repeated registration of the same tensor yields
    /// the same variable, so gradients from every use accumulate.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let key = Arc::as_ptr(tensor.shared()) as usize;
        if let Some(&index) = self.params.get(&key) {
            return self.var(index);
        }
        let v = self.leaf(tensor);
        self.params.insert(key, v.index);
        v
    }

    /// Removes and returns the gradient accumulated for a registered parameter.
    pub fn take_param_grad(&mut self, tensor: &Tensor<T>) -> Option<Vec<T>> {
        let key = Arc::as_ptr(tensor.shared()) as usize;
        let index = *self.params.get(&key)?;
        self.nodes[index].grad.take()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.index(v).expect("variable from this graph");
        &self.nodes[i].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.value(v).dims()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        let i = self.index(v).ok()?;
        self.nodes[i].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        let i = self.index(v).ok()?;
        self.nodes[i].grad.take()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[self.index(v).expect("variable from this graph")].op.kind()
    }

    pub(crate) fn push(&mut self, shape: Shape, values: Vec<T>, op: Op<T>) -> Var {
        let requires_grad = self.recording && op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Tensor::from_shared(shape, Arc::new(values)),
            op,
            requires_grad,
            grad: None,
        });
        self.var(self.nodes.len() - 1)
    }

    pub(crate) fn node_value(&self, index: usize) -> &Tensor<T> {
        &self.nodes[index].value
    }

    fn needs(&self, index: usize) -> bool {
        self.nodes[index].requires_grad
    }

    /// Back-propagates from a scalar `loss`, accumulating gradients into
    /// every leaf that requires grad. Intermediate gradients are released as
    /// the sweep passes them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::BackwardWithoutGraph("graph was built without recording"));
        }
        let root = self.index(loss)?;
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let value = &self.nodes[root].value;
        if value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: value.dims().to_vec(),
            });
        }
        self.consumed = true;
        if !self.nodes[root].requires_grad {
            return Ok(());
        }
        self.nodes[root].grad = Some(vec![T::one()]);

        for i in (0..=root).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            let mut grads = self.input_grads(i, &upstream);
            if let Some(fault) = self.fault {
                if fault.op == self.nodes[i].op.kind() {
                    let scale = T::from_float(fault.scale);
                    for (_, g) in grads.iter_mut() {
                        g.iter_mut().for_each(|v| *v = *v * scale);
                    }
                }
            }
            for (input, g) in grads {
                let slot = &mut self.nodes[input].grad;
                match slot {
                    Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e = *e + v),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradients for the inputs of node `i` that require grad.
    fn input_grads(&self, i: usize, dy: &[T]) -> Vec<(usize, Vec<T>)> {
        let val = |j: usize| self.nodes[j].value.values();
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need_b = bias.is_some_and(|b| self.needs(b));
                let (dx, dw, db) = conv2d_backward(
                    val(*input),
                    val(*weight),
                    dy,
                    geom,
                    self.needs(*input),
                    self.needs(*weight),
                    need_b,
                );
                out.extend(dx.map(|g| (*input, g)));
                out.extend(dw.map(|g| (*weight, g)));
                if let (Some(b), Some(g)) = (bias, db) {
                    out.push((*b, g));
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![T::zero(); val(*input).len()];
                for (&src, &g) in argmax.iter().zip(dy) {
                    dx[src] = dx[src] + g;
                }
                out.push((*input, dx));
            }
            Op::GlobalAvgPool { input } => {
                let dims = self.nodes[*input].value.dims();
                out.push((*input, pool::global_avg_pool_backward(dims, dy)));
            }
            Op::AdaptiveAvgPool { input, out_h, out_w } => {
                let dims = self.nodes[*input].value.dims();
                out.push((*input, pool::adaptive_avg_pool_backward(dims, *out_h, *out_w, dy)));
            }
            Op::Linear { input, weight, bias } => {
                let x = &self.nodes[*input].value;
                let w = &self.nodes[*weight].value;
                let (n, din) = (x.dims()[0], x.dims()[1]);
                let dout = w.dims()[0];
                if self.needs(*input) {
                    out.push((*input, linear::grad_input(dy, w.values(), n, din, dout)));
                }
                if self.needs(*weight) {
                    out.push((*weight, linear::grad_weight(dy, x.values(), n, din, dout)));
                }
                if let Some(b) = bias.filter(|&b| self.needs(b)) {
                    out.push((b, linear::grad_bias(dy, n, dout)));
                }
            }
            Op::Relu { input } => {
                let g = val(*input)
                    .iter()
                    .zip(dy)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*input, g));
            }
            Op::Sigmoid { input } => {
                let y = self.nodes[i].value.values();
                let g = y.iter().zip(dy).map(|(&s, &g)| g * s * (T::one() - s)).collect();
                out.push((*input, g));
            }
            Op::Add { a, b } => {
                for &j in [a, b] {
                    if self.needs(j) {
                        out.push((j, dy.to_vec()));
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    out.push((*a, dy.iter().zip(val(*b)).map(|(&g, &v)| g * v).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, dy.iter().zip(val(*a)).map(|(&g, &v)| g * v).collect()));
                }
            }
            Op::MulChannel { x, s } => {
                let dims = self.nodes[*x].value.dims();
                let (dx, ds) = elementwise::mul_channel_backward(dims, val(*x), val(*s), dy);
                if self.needs(*x) {
                    out.push((*x, dx));
                }
                if self.needs(*s) {
                    out.push((*s, ds));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let dims = self.nodes[*input].value.dims();
                let grads =
                    norm::batch_norm_backward(dims, xhat, inv_std, val(*gamma), dy, *batch_stats, self.needs(*input));
                out.extend(grads.dx.map(|g| (*input, g)));
                if self.needs(*gamma) {
                    out.push((*gamma, grads.dgamma));
                }
                if self.needs(*beta) {
                    out.push((*beta, grads.dbeta));
                }
            }
            Op::Reshape { input } => out.push((*input, dy.to_vec())),
            Op::Sum { input } => out.push((*input, vec![dy[0]; val(*input).len()])),
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.nodes[*logits].value.dims()[1];
                out.push((*logits, loss::cross_entropy_backward(probs, labels, k, dy[0])));
            }
        }
        out
    }

    /// Flattens all axes after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let value = &self.nodes[xi].value;
        let n = value.dims().first().copied().unwrap_or(1);
        let shape = Shape::new([n, value.numel() / n])?;
        let values = value.values().to_vec();
        Ok(self.push(shape, values, Op::Reshape { input: xi }))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let total = self.nodes[xi].value.values().iter().copied().sum();
        Ok(self.push(Shape::new([1])?, vec![total], Op::Sum { input: xi }))
    }
}
