//! Central finite-difference gradient checking.
//!
//! The error reported per input is the normwise relative error
//! `max_i |analytic_i − numeric_i| / max(max_i |numeric_i|, 1e-12)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Largest finite-difference magnitude seen, the denominator of `max_rel_err`.
    pub max_numeric: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

/// Normwise relative error of several reports taken as one gradient vector.
///
/// Use this for whole models: a parameter whose true gradient vanishes (a key
/// bias under softmax shift invariance) would otherwise divide noise by noise.
pub fn combined_rel_err<'a>(reports: impl IntoIterator<Item = &'a InputReport>) -> f64 {
    let (mut abs, mut num) = (0.0f64, 0.0f64);
    for r in reports {
        abs = abs.max(r.max_abs_err);
        num = num.max(r.max_numeric);
    }
    abs / num.max(1e-12)
}

/// Compares the tape's gradient of `f(inputs)` against central differences.
///
/// `f` must return a scalar. With `max_coords = Some(n)`, at most `n`
/// coordinates per input are perturbed, chosen by a seeded draw.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, max_coords: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::Contract("gradient check needs a scalar function".into()));
        }
        Ok(v.data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = Philox::with_stream(0x6C4E, 0);
    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].dims());
        let analytic = grads.wrt(v).unwrap_or(&zeros).clone();
        let n = inputs[i].len();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => (0..m).map(|_| rng.below(n as u64) as usize).collect(),
            _ => (0..n).collect(),
        };
        let mut max_abs: f64 = 0.0;
        let mut max_num: f64 = 0.0;
        for &c in &coords {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_abs = max_abs.max((numeric - analytic.data()[c]).abs());
            max_num = max_num.max(numeric.abs());
        }
        reports.push(InputReport {
            max_abs_err: max_abs,
            max_rel_err: max_abs / max_num.max(1e-12),
            max_numeric: max_num,
            coords_checked: coords.len(),
        });
    }
    Ok(GradCheckReport { inputs: reports })
}

/// `sum(x ⊙ r)` for a fixed pseudo-random `r`; turns any output into a scalar
/// with a non-degenerate gradient.
pub fn random_projection(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let dims = g.dims(x).to_vec();
    let mut rng = Philox::with_stream(seed, 0x9E0);
    let r = Tensor::from_fn(&dims, |_| rng.uniform() * 2.0 - 1.0)?;
    let r = g.constant(r);
    let p = g.mul(x, r)?;
    Ok(g.sum(p))
}

/// Finite-difference check over every parameter of `model`.
///
/// Returns one report per parameter tensor, in visit order, paired with its name.
pub fn check_param_gradients<P, F>(
    model: &mut P,
    h: f64,
    max_coords: Option<usize>,
    f: F,
) -> Result<Vec<(alloc::string::String, InputReport)>>
where
    P: crate::layers::Parameters,
    F: Fn(&mut Graph, &P) -> Result<Var>,
{
    let eval = |m: &P| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, m)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let out = f(&mut g, model)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<(alloc::string::String, Tensor)> = model
        .named_params()
        .into_iter()
        .map(|(name, p)| {
            let grad = grads.param(p.id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.dims()));
            (name, grad)
        })
        .collect();

    let mut rng = Philox::with_stream(0x6C4E, 1);
    let mut reports = Vec::with_capacity(analytic.len());
    for (slot, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => (0..m).map(|_| rng.below(n as u64) as usize).collect(),
            _ => (0..n).collect(),
        };
        let mut max_abs: f64 = 0.0;
        let mut max_num: f64 = 0.0;
        for &c in &coords {
            let set = |m: &mut P, value: Option<f64>| -> f64 {
                let mut k = 0;
                let mut old = 0.0;
                m.visit_mut("", &mut |_, p| {
                    if k == slot {
                        old = p.value.data()[c];
                        if let Some(v) = value {
                            p.value.data_mut()[c] = v;
                        }
                    }
                    k += 1;
                });
                old
            };
            let orig = set(model, None);
            set(model, Some(orig + h));
            let plus = eval(model)?;
            set(model, Some(orig - h));
            let minus = eval(model)?;
            set(model, Some(orig));
            let numeric = (plus - minus) / (2.0 * h);
            max_abs = max_abs.max((numeric - grad.data()[c]).abs());
            max_num = max_num.max(numeric.abs());
        }
        reports.push((
            name.clone(),
            InputReport {
                max_abs_err: max_abs,
                max_rel_err: max_abs / max_num.max(1e-12),
                max_numeric: max_num,
                coords_checked: coords.len(),
            },
        ));
    }
    Ok(reports)
}
