use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact form `x·Φ(x)`, not the tanh approximation.
    Gelu,
    Sigmoid,
    LeakyRelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI);
                cdf + x * pdf
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(op, "operands must have equal shapes", a.dims(), b.dims()));
    }
    Ok(())
}

fn channel_vector(op: &'static str, x: &Tensor, v: &Tensor) -> Result<usize> {
    let c = x.last_dim();
    if v.len() != c {
        return Err(Error::dim(op, "vector length must equal channel extent", x.dims(), v.dims()));
    }
    Ok(c)
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out, 0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out, 0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out, 0))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::MulConst(x, c), out, 0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::exp);
        self.push(Op::Exp(x), out, 0)
    }

    /// `x[.., c] * scale[c]`.
    pub fn mul_channel(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(scale));
        let c = channel_vector("mul_channel", xv, sv)?;
        let s = sv.data();
        let data = xv.data().iter().enumerate().map(|(i, &v)| v * s[i % c]).collect();
        let out = Tensor::from_raw(xv.dims().to_vec(), data);
        Ok(self.push(Op::MulChannel { x, scale }, out, 0))
    }

    /// `x[.., c] + shift[c]`.
    pub fn add_channel(&mut self, x: Var, shift: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(shift));
        let c = channel_vector("add_channel", xv, sv)?;
        let s = sv.data();
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + s[i % c]).collect();
        let out = Tensor::from_raw(xv.dims().to_vec(), data);
        Ok(self.push(Op::AddChannel { x, shift }, out, 0))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let out = self.value(x).map(|v| kind.eval(v));
        self.push(Op::Act { x, kind }, out, 0)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(Activation::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        self.activation(Activation::LeakyRelu, x)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        // from_raw: a non-finite total must reach the caller's guard, not panic
        let out = Tensor::from_raw(vec![1], vec![self.value(x).sum()]);
        self.push(Op::Sum(x), out, 0)
    }

    /// Mean squared error, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let out = Tensor::from_raw(vec![1], vec![s / av.len() as f64]);
        Ok(self.push(Op::Mse(a, b), out, 0))
    }

    /// Mean over every axis except the channel axis: `[.., c] → [1, c]`.
    pub fn mean_tokens(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.len() / c;
        let mut acc = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= rows as f64;
        }
        self.push(Op::MeanTokens(x), Tensor::from_raw(vec![1, c], acc), 0)
    }
}

pub(super) fn vjp(graph: &Graph, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
    let gd = g.data();
    match op {
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => {
            let (av, bv) = (graph.value(*a), graph.value(*b));
            let ga = g.zip_map(bv, |x, y| x * y).unwrap();
            let gb = g.zip_map(av, |x, y| x * y).unwrap();
            vec![(*a, ga), (*b, gb)]
        }
        Op::MulConst(x, c) => vec![(*x, g.map(|v| v * c))],
        Op::Exp(x) => vec![(*x, g.zip_map(out, |u, y| u * y).unwrap())],
        Op::MulChannel { x, scale } => {
            let (xv, sv) = (graph.value(*x), graph.value(*scale));
            let c = sv.len();
            let s = sv.data();
            let gx = gd.iter().enumerate().map(|(i, &u)| u * s[i % c]).collect();
            let mut gs = vec![0.0; c];
            for (grow, xrow) in gd.chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                for k in 0..c {
                    gs[k] += grow[k] * xrow[k];
                }
            }
            vec![
                (*x, Tensor::from_raw(xv.dims().to_vec(), gx)),
                (*scale, Tensor::from_raw(sv.dims().to_vec(), gs)),
            ]
        }
        Op::AddChannel { x, shift } => {
            let sv = graph.value(*shift);
            let c = sv.len();
            let mut gs = vec![0.0; c];
            for grow in gd.chunks_exact(c) {
                for k in 0..c {
                    gs[k] += grow[k];
                }
            }
            vec![(*x, g.clone()), (*shift, Tensor::from_raw(sv.dims().to_vec(), gs))]
        }
        Op::Act { x, kind } => {
            let xv = graph.value(*x);
            vec![(*x, g.zip_map(xv, |u, v| u * kind.derivative(v)).unwrap())]
        }
        Op::Sum(x) => {
            let n = graph.value(*x).len();
            vec![(*x, Tensor::from_raw(graph.dims(*x).to_vec(), vec![gd[0]; n]))]
        }
        Op::Mse(a, b) => {
            let (av, bv) = (graph.value(*a), graph.value(*b));
            let k = 2.0 * gd[0] / av.len() as f64;
            let ga = av.zip_map(bv, |x, y| k * (x - y)).unwrap();
            let gb = ga.map(|v| -v);
            vec![(*a, ga), (*b, gb)]
        }
        Op::MeanTokens(x) => {
            let xv = graph.value(*x);
            let c = xv.last_dim();
            let rows = (xv.len() / c) as f64;
            let data = (0..xv.len()).map(|i| gd[i % c] / rows).collect();
            vec![(*x, Tensor::from_raw(xv.dims().to_vec(), data))]
        }
        _ => unreachable!("not an element-wise op"),
    }
}
