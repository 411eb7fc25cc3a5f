//! Parameter containers shared by every network component.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tape::{Graph, Param, ParamIds, Var};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Walks named parameters in a fixed order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for Param {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(String::from(prefix), self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(String::from(prefix), self);
    }
}

impl<P: Parameters> Parameters for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &format!("{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &format!("{i}")), f);
        }
    }
}

/// Implements [`Parameters`] for a struct by listing its fields.
macro_rules! impl_parameters {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::layers::Parameters for $ty {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &'a $crate::tape::Param)) {
                $( self.$field.visit(&$crate::layers::join(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &mut $crate::tape::Param)) {
                $( self.$field.visit_mut(&$crate::layers::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_parameters;

/// Source of fresh parameters: truncated-normal weights, zero biases.
pub struct Init {
    rng: Philox,
    ids: ParamIds,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: Philox::with_stream(seed, 0x1A17),
            ids: ParamIds::new(),
        }
    }

    pub fn normal(&mut self, dims: &[usize], std: f64) -> Param {
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.rng.truncated_normal(std)).collect();
        self.ids.wrap(Tensor::new(dims, data).expect("finite init"))
    }

    pub fn weight(&mut self, dims: &[usize]) -> Param {
        self.normal(dims, INIT_STD)
    }

    pub fn constant(&mut self, dims: &[usize], value: f64) -> Param {
        self.ids.wrap(Tensor::full(dims, value))
    }

    pub fn zeros(&mut self, dims: &[usize]) -> Param {
        self.constant(dims, 0.0)
    }

    pub fn wrap(&mut self, t: Tensor) -> Param {
        self.ids.wrap(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl_parameters!(LinearParams { weight, bias });

impl LinearParams {
    pub fn init(init: &mut Init, d_in: usize, d_out: usize, bias: bool) -> Self {
        LinearParams {
            weight: init.weight(&[d_in, d_out]),
            bias: bias.then(|| init.zeros(&[d_out])),
        }
    }

    /// Wraps explicit tensors, checking shape consistency.
    pub fn from_tensors(init: &mut Init, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::dim("linear", "weight must be rank 2", weight.dims(), &[]));
        }
        if let Some(b) = &bias {
            if b.len() != weight.dims()[1] {
                return Err(Error::dim("linear", "bias length must equal d_out", weight.dims(), b.dims()));
            }
        }
        Ok(LinearParams {
            weight: init.wrap(weight),
            bias: bias.map(|b| init.wrap(b)),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.linear(x, w, b)
    }

    pub fn closed_form_count(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }
}

/// Frame-wise 2D convolution with a `k × k` kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    pub weight: Param,
    pub bias: Param,
}

impl_parameters!(Conv2dParams { weight, bias });

impl Conv2dParams {
    pub fn init(init: &mut Init, k: usize, c_in: usize, c_out: usize) -> Self {
        Conv2dParams {
            weight: init.weight(&[k, k, c_in, c_out]),
            bias: init.zeros(&[c_out]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, stride: usize) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv2d(x, w, Some(b), stride)
    }

    pub fn closed_form_count(k: usize, c_in: usize, c_out: usize) -> usize {
        k * k * c_in * c_out + c_out
    }
}

/// 1D convolution along the temporal axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTemporalParams {
    pub weight: Param,
    pub bias: Param,
}

impl_parameters!(ConvTemporalParams { weight, bias });

impl ConvTemporalParams {
    pub fn init(init: &mut Init, k: usize, c_in: usize, c_out: usize) -> Self {
        ConvTemporalParams {
            weight: init.weight(&[k, c_in, c_out]),
            bias: init.zeros(&[c_out]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv_temporal(x, w, Some(b))
    }

    pub fn closed_form_count(k: usize, c_in: usize, c_out: usize) -> usize {
        k * c_in * c_out + c_out
    }
}

/// Layer normalization over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Param,
    pub shift: Param,
}

impl_parameters!(NormParams { gain, shift });

impl NormParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        NormParams {
            gain: init.constant(&[c], 1.0),
            shift: init.zeros(&[c]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(&self.gain);
        let shift = g.param(&self.shift);
        g.layer_norm(x, gain, shift)
    }

    pub fn closed_form_count(c: usize) -> usize {
        2 * c
    }
}

/// Sets every parameter to zero (used to build residual-identity cases).
pub fn zero_all<P: Parameters>(p: &mut P) {
    p.visit_mut("", &mut |_, param| {
        for v in param.value.data_mut() {
            *v = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_count_with_bias() {
        let mut init = Init::new(0);
        let l = LinearParams::init(&mut init, 2, 3, true);
        assert_eq!(l.param_count(), 9);
        assert_eq!(LinearParams::closed_form_count(2, 3, true), 9);
        let names: Vec<String> = l.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
    }

    #[test]
    fn init_is_truncated_and_deterministic() {
        let a = Init::new(5).weight(&[64, 64]);
        let b = Init::new(5).weight(&[64, 64]);
        assert_eq!(a.value, b.value);
        assert!(a.value.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
    }

    #[test]
    fn ids_are_distinct() {
        let mut init = Init::new(0);
        let l = LinearParams::init(&mut init, 2, 2, true);
        assert_ne!(l.weight.id, l.bias.as_ref().unwrap().id);
    }
}
