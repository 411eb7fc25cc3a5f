//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::tape::ParamId;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// One update of every parameter of `params`. Missing gradients count as zero.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &BTreeMap<ParamId, Tensor>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        let mut err = None;
        let moments = &mut self.moments;
        params.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            let n = p.value.len();
            let state = moments.entry(p.id).or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.dims()),
                v: Tensor::zeros(p.value.dims()),
            });
            let g = grads.get(&p.id);
            if let Some(g) = g {
                if g.len() != n {
                    err = Some(Error::dim("adam_step", "gradient shape differs from parameter", g.dims(), p.value.dims()));
                    return;
                }
            }
            let (m, v) = (state.m.data_mut(), state.v.data_mut());
            let w = p.value.data_mut();
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= c.lr * m_hat / (libm::sqrt(v_hat) + c.epsilon);
            }
            if !w.iter().all(|x| x.is_finite()) {
                err = Some(Error::Numeric(format!("parameter `{name}` became non-finite")));
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Moments keyed by parameter name, in visit order.
    pub fn named_moments<P: Parameters>(&self, params: &P) -> Vec<(String, Moments)> {
        params
            .named_params()
            .into_iter()
            .filter_map(|(name, p)| self.moments.get(&p.id).map(|s| (name, s.clone())))
            .collect()
    }

    /// Rebuilds optimizer state from [`Adam::named_moments`] output.
    pub fn from_named_moments<P: Parameters>(
        config: AdamConfig,
        step: u64,
        params: &P,
        named: Vec<(String, Moments)>,
    ) -> Result<Self> {
        let mut adam = Adam::new(config)?;
        adam.step = step;
        let ids: BTreeMap<String, (ParamId, Vec<usize>)> = params
            .named_params()
            .into_iter()
            .map(|(n, p)| (n, (p.id, p.value.dims().to_vec())))
            .collect();
        for (name, state) in named {
            let (id, dims) = ids
                .get(&name)
                .ok_or_else(|| Error::Parameter(format!("optimizer state for unknown parameter `{name}`")))?;
            if state.m.dims() != dims.as_slice() || state.v.dims() != dims.as_slice() {
                return Err(Error::dim("adam_step", "moment shape differs from parameter", state.m.dims(), dims));
            }
            adam.moments.insert(*id, state);
        }
        Ok(adam)
    }
}
