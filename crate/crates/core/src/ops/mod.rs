//! Differentiable primitives.
//!
//! Each primitive exists twice: as a plain tensor function (no recording) and
//! as a [`Graph`] method that records the node and knows its vector-Jacobian
//! product. Both routes share one kernel.

mod elementwise;
mod linalg;
mod nn;
mod spatial;

use alloc::vec::Vec;

pub use elementwise::Activation;

use crate::error::Result;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Batched contraction `[.., m, k] × [.., k, n] → [.., m, n]`.
pub fn matmul_batched(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    linalg::bmm_forward(a, b, false)
}

/// Numerically stable softmax over the trailing axis.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    nn::softmax_forward(x, false)
}

/// Mean over non-overlapping `rho × rho` spatial blocks of a `T × H × W × d` tensor.
pub fn avg_pool_spatial(x: &Tensor, rho: usize) -> Result<Tensor> {
    spatial::avg_pool_forward(x, rho)
}

/// `T × H × W × r²c → T × rH × rW × c`, sub-pixel index `r·di + dj` major.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    spatial::shuffle_forward(x, r, false)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    spatial::shuffle_forward(x, r, true)
}

pub fn apply_activation(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.eval(v))
}

/// Sum that is invariant to the order of `terms`: sorts, then accumulates.
pub(crate) fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

impl Graph {
    /// Vector-Jacobian product of node `v` given the upstream gradient.
    pub(crate) fn vjp(&self, v: Var, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[v.0];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Reshape(x) => alloc::vec![(*x, Tensor::from_raw(self.dims(*x).to_vec(), g.data().to_vec()))],
            Op::Add(..)
            | Op::Sub(..)
            | Op::Mul(..)
            | Op::MulConst(..)
            | Op::Exp(_)
            | Op::MulChannel { .. }
            | Op::AddChannel { .. }
            | Op::Act { .. }
            | Op::Sum(_)
            | Op::Mse(..)
            | Op::MeanTokens(_) => elementwise::vjp(self, &node.op, out, g),
            Op::Bmm { a, b, trans_b } => linalg::bmm_vjp(self, *a, *b, *trans_b, g),
            Op::Linear { x, w, b } => linalg::linear_vjp(self, *x, *w, *b, g),
            Op::Softmax(x) => alloc::vec![(*x, nn::softmax_vjp(out, g))],
            Op::LayerNorm { x, gain, shift, mean, rstd } => {
                nn::layer_norm_vjp(self, *x, *gain, *shift, mean, rstd, g)
            }
            Op::AvgPool { .. }
            | Op::PixelShuffle { .. }
            | Op::PixelUnshuffle { .. }
            | Op::GatherRows { .. }
            | Op::Concat(_)
            | Op::SliceChannels { .. }
            | Op::Conv2d { .. }
            | Op::ConvTemporal { .. } => spatial::vjp(self, &node.op, g),
        }
    }
}
