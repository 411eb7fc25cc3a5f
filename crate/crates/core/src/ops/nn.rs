use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(super) fn softmax_forward(x: &Tensor, order_free: bool) -> Tensor {
    let n = x.last_dim();
    let mut out = x.data().to_vec();
    let mut scratch = Vec::new();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
        }
        let z = if order_free {
            scratch.clear();
            scratch.extend_from_slice(row);
            super::sorted_sum(&mut scratch)
        } else {
            row.iter().sum()
        };
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_raw(x.dims().to_vec(), out)
}

pub(super) fn softmax_vjp(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.last_dim();
    let mut out = vec![0.0; y.len()];
    for ((orow, yrow), grow) in out
        .chunks_exact_mut(n)
        .zip(y.data().chunks_exact(n))
        .zip(g.data().chunks_exact(n))
    {
        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        for k in 0..n {
            orow[k] = yrow[k] * (grow[k] - dot);
        }
    }
    Tensor::from_raw(y.dims().to_vec(), out)
}

impl Graph {
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_forward(self.value(x), false);
        self.push(Op::Softmax(x), out, 0)
    }

    /// Softmax whose result does not depend on the order of the last axis,
    /// bit for bit: the normalizer is summed in sorted order.
    pub fn softmax_order_free(&mut self, x: Var) -> Var {
        let out = softmax_forward(self.value(x), true);
        self.push(Op::Softmax(x), out, 0)
    }

    /// Layer normalization over the channel axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if self.value(gain).len() != c || self.value(shift).len() != c {
            return Err(Error::dim("layer_norm", "gain/shift must match channels", xv.dims(), self.dims(gain)));
        }
        let (gd, sd) = (self.value(gain).data(), self.value(shift).data());
        let rows = xv.len() / c;
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![0.0; xv.len()];
        for (orow, xrow) in out.chunks_exact_mut(c).zip(xv.data().chunks_exact(c)) {
            let mu = xrow.iter().sum::<f64>() / c as f64;
            let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let r = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            for k in 0..c {
                orow[k] = (xrow[k] - mu) * r * gd[k] + sd[k];
            }
            mean.push(mu);
            rstd.push(r);
        }
        let out = Tensor::from_raw(xv.dims().to_vec(), out);
        Ok(self.push(Op::LayerNorm { x, gain, shift, mean, rstd }, out, 0))
    }
}

pub(super) fn layer_norm_vjp(
    graph: &Graph,
    x: Var,
    gain: Var,
    shift: Var,
    mean: &[f64],
    rstd: &[f64],
    g: &Tensor,
) -> Vec<(Var, Tensor)> {
    let xv = graph.value(x);
    let c = xv.last_dim();
    let gain_d = graph.value(gain).data();
    let mut gx = vec![0.0; xv.len()];
    let mut ggain = vec![0.0; c];
    let mut gshift = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for (row, ((gxrow, xrow), grow)) in gx
        .chunks_exact_mut(c)
        .zip(xv.data().chunks_exact(c))
        .zip(g.data().chunks_exact(c))
        .enumerate()
    {
        let (mu, r) = (mean[row], rstd[row]);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for k in 0..c {
            xhat[k] = (xrow[k] - mu) * r;
            dxhat[k] = grow[k] * gain_d[k];
            ggain[k] += grow[k] * xhat[k];
            gshift[k] += grow[k];
            m1 += dxhat[k];
            m2 += dxhat[k] * xhat[k];
        }
        m1 /= c as f64;
        m2 /= c as f64;
        for k in 0..c {
            gxrow[k] = r * (dxhat[k] - m1 - xhat[k] * m2);
        }
    }
    vec![
        (x, Tensor::from_raw(xv.dims().to_vec(), gx)),
        (gain, Tensor::from_raw(graph.dims(gain).to_vec(), ggain)),
        (shift, Tensor::from_raw(graph.dims(shift).to_vec(), gshift)),
    ]
}
