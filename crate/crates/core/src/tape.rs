//! Recorded reverse-mode differentiation.
//!
//! A [`Graph`] is a Wengert list: every op appends one node holding its output
//! and whatever it needs for the vector-Jacobian product. Nodes are pushed in
//! evaluation order, so the node list is topologically sorted by construction
//! and [`Graph::backward`] is a single reverse sweep.
//!
//! The graph also counts multiply-accumulates. One MAC is one multiply plus one
//! add; only contractions (matmul, linear, convolution) contribute, element-wise
//! work and softmax exponentials count zero.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stable identity of a trainable tensor, shared between forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub u32);

/// A trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub id: ParamId,
    pub value: Tensor,
}

/// Hands out sequential [`ParamId`]s.
#[derive(Debug, Default, Clone)]
pub struct ParamIds {
    next: u32,
}

impl ParamIds {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrap(&mut self, value: Tensor) -> Param {
        let id = ParamId(self.next);
        self.next += 1;
        Param { id, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Linear,
    Conv,
    Softmax,
    Pool,
    Shuffle,
    Activation,
    Elementwise,
    Gather,
    Norm,
    Reduce,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Linear,
        OpKind::Conv,
        OpKind::Softmax,
        OpKind::Pool,
        OpKind::Shuffle,
        OpKind::Activation,
        OpKind::Elementwise,
        OpKind::Gather,
        OpKind::Norm,
        OpKind::Reduce,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-kind multiply-accumulate totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacCounter {
    per_kind: [u64; 12],
}

impl MacCounter {
    pub fn add(&mut self, kind: OpKind, macs: u64) {
        self.per_kind[kind.slot()] += macs;
    }

    pub fn get(&self, kind: OpKind) -> u64 {
        self.per_kind[kind.slot()]
    }

    pub fn total(&self) -> u64 {
        self.per_kind.iter().sum()
    }

    pub fn by_kind(&self) -> impl Iterator<Item = (OpKind, u64)> + '_ {
        OpKind::ALL.iter().map(move |&k| (k, self.get(k)))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, f64),
    Exp(Var),
    MulChannel { x: Var, scale: Var },
    AddChannel { x: Var, shift: Var },
    Act { x: Var, kind: Activation },
    Bmm { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, shift: Var, mean: Vec<f64>, rstd: Vec<f64> },
    AvgPool { x: Var, rho: usize },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    GatherRows { x: Var, row_len: usize, idx: Vec<usize> },
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize },
    ConvTemporal { x: Var, w: Var, b: Option<Var> },
    MeanTokens(Var),
    Sum(Var),
    Mse(Var, Var),
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Bmm { .. } => OpKind::MatMul,
            Op::Linear { .. } => OpKind::Linear,
            Op::Conv2d { .. } | Op::ConvTemporal { .. } => OpKind::Conv,
            Op::Softmax(_) => OpKind::Softmax,
            Op::AvgPool { .. } => OpKind::Pool,
            Op::PixelShuffle { .. } | Op::PixelUnshuffle { .. } => OpKind::Shuffle,
            Op::Act { .. } => OpKind::Activation,
            Op::GatherRows { .. } | Op::Concat(_) | Op::SliceChannels { .. } | Op::Reshape(_) => {
                OpKind::Gather
            }
            Op::LayerNorm { .. } => OpKind::Norm,
            Op::MeanTokens(_) | Op::Sum(_) | Op::Mse(..) => OpKind::Reduce,
            Op::Add(..)
            | Op::Sub(..)
            | Op::Mul(..)
            | Op::MulConst(..)
            | Op::Exp(_)
            | Op::MulChannel { .. }
            | Op::AddChannel { .. } => OpKind::Elementwise,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Reshape(x)
            | Op::MulConst(x, _)
            | Op::Exp(x)
            | Op::Act { x, .. }
            | Op::Softmax(x)
            | Op::AvgPool { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::PixelUnshuffle { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SliceChannels { x, .. }
            | Op::MeanTokens(x)
            | Op::Sum(x) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::MulChannel { x, scale } => vec![*x, *scale],
            Op::AddChannel { x, shift } => vec![*x, *shift],
            Op::Bmm { a, b, .. } => vec![*a, *b],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } | Op::ConvTemporal { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::LayerNorm { x, gain, shift, .. } => vec![*x, *gain, *shift],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
    pub(crate) needs_grad: bool,
}

/// The recording context (a tape of nodes plus the MAC counter).
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    macs: MacCounter,
    params: BTreeMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            macs: MacCounter::default(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn macs(&self) -> &MacCounter {
        &self.macs
    }

    pub fn reset_macs(&mut self) {
        self.macs = MacCounter::default();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. It is differentiable iff the tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = if t.requires_grad() { Tensor::from_raw(t.dims().to_vec(), t.into_data()) } else { t };
        self.leaf(t)
    }

    /// Records a trainable parameter; repeated calls with the same id share one node.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.params.get(&p.id) {
            return v;
        }
        let v = self.leaf(p.value.clone().with_grad());
        self.params.insert(p.id, v);
        v
    }

    pub(crate) fn push(&mut self, op: Op, value: Tensor, macs: u64) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i.0].needs_grad);
        self.macs.add(op.kind(), macs);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = &self.nodes[loss.0].value;
        if seed.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                seed.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_raw(seed.dims().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[i].take() else { continue };
            for (input, g) in self.vjp(Var(i), &upstream) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            // keep the seed around for callers asking about intermediate nodes
            grads[i] = Some(upstream);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a node; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.wrt(v))
    }

    /// Gradient map keyed by parameter id. Parameters the loss ignores get zeros.
    pub fn into_param_map(mut self, graph: &Graph) -> BTreeMap<ParamId, Tensor> {
        let mut out = BTreeMap::new();
        for (&id, &v) in &self.params {
            let g = self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(graph.value(v).dims()));
            out.insert(id, g);
        }
        out
    }
}
