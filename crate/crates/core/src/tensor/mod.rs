//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation executed through it. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns
//! the adjoint of every leaf created with [`Tape::leaf`]. A tape is built
//! fresh for each forward pass and dropped afterwards.
//!
//! Only the handful of operations the model needs are provided, each with a
//! hand-written adjoint. All of them are checked against central finite
//! differences in [`gradcheck`].

mod backward;
pub mod gradcheck;
mod ops;
mod segments;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use ops::huber_scalar;
pub use segments::Segments;

/// Stabilizer added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Shaped array of scalars in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all but the last axis.
    pub fn rows(&self) -> usize {
        match self.cols() {
            0 => 0,
            c => self.data.len() / c,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operation kinds, as named in gradient-check reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    Gelu,
    Tanh,
    LayerNorm,
    Softmax,
    SegmentAttend,
    ConcatCols,
    ConcatRows,
    GatherRows,
    ScatterAddRows,
    Sum,
    Mean,
    Huber,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::MatMul,
        OpKind::Linear,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddBias,
        OpKind::Gelu,
        OpKind::Tanh,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::SegmentAttend,
        OpKind::ConcatCols,
        OpKind::ConcatRows,
        OpKind::GatherRows,
        OpKind::ScatterAddRows,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Huber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Linear => "linear",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Softmax => "softmax",
            OpKind::SegmentAttend => "segment_attend",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::GatherRows => "gather_rows",
            OpKind::ScatterAddRows => "scatter_add_rows",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Huber => "huber",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SegmentAttend {
        q: Var,
        k: Var,
        v: Var,
        segments: Arc<Segments>,
        /// `heads × n_keys`, head-major.
        weights: Vec<f64>,
        scale: f64,
        heads: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    Huber {
        pred: Var,
        target: Vec<f64>,
        delta: f64,
    },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Linear(..) => OpKind::Linear,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax(..) => OpKind::Softmax,
            Op::SegmentAttend { .. } => OpKind::SegmentAttend,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::ScatterAddRows(..) => OpKind::ScatterAddRows,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Huber { .. } => OpKind::Huber,
        })
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of executed operations. Node `i` only ever refers to
/// nodes `< i`, so the record is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Softmax weights saved by a `segment_attend` node: one block per head,
    /// each laid out in the order of the segment indices.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::SegmentAttend { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Scales every adjoint produced by `kind` nodes by `factor`.
    /// Negative-control hook for the gradient checker; never set in normal use.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse accumulation from a scalar `loss`. Gradients are kept for
    /// every leaf that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_retaining(loss, &[])
    }

    /// Like [`Tape::backward`], additionally keeping the adjoints of the
    /// intermediate values in `retain`.
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut keep = vec![false; loss.0 + 1];
        for (i, n) in self.nodes[..=loss.0].iter().enumerate() {
            keep[i] = matches!(n.op, Op::Leaf) && n.requires_grad;
        }
        for r in retain {
            if r.0 <= loss.0 {
                keep[r.0] = true;
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut kept: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            if !matches!(node.op, Op::Leaf) {
                if let (Some((kind, factor)), Some(k)) = (self.fault, node.op.kind()) {
                    if kind == k {
                        g.iter_mut().for_each(|x| *x *= factor);
                    }
                }
                self.backward_node(i, &g, &mut grads);
            }
            if keep[i] {
                kept[i] = Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: g,
                });
            }
        }
        Ok(Gradients { grads: kept })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if `v` was not reached or not retained.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, zero-filled if the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// The tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests;
