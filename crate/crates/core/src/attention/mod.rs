//! Video self-attention.
//!
//! [`css_msa`] is cross-scale separable attention: inside each `ρh × ρw`
//! spatial window, every frame's queries attend to `ρ`-pooled keys/values of
//! the same frame, then every spatial position attends over all frames. The
//! comparison kinds in [`baseline_msa`] and the dense joint-matrix evaluation in
//! [`joint_attention_oracle`] share the same window geometry.

mod baseline;
mod css;
mod oracle;
mod window;

use alloc::format;
use alloc::vec::Vec;

pub use baseline::{baseline_msa, BaselineKind};
pub use css::{css_msa, project_qkv};
pub use oracle::{joint_attention_oracle, JointAttention, OracleOutput, ORACLE_TOKEN_LIMIT};
pub use window::{merge_windows, partition_windows, MergeDescriptor, WindowLayout};

use crate::error::{Error, Result};
use crate::layers::{impl_parameters, Init, LinearParams};
use crate::tape::{Graph, Param, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Channel width `d` of the branch.
    pub d: usize,
    pub heads: usize,
    /// Base window `h × w`; the spatial window actually partitioned is `ρh × ρw`.
    pub window_h: usize,
    pub window_w: usize,
    /// Temporal window `t`, used only by the 3D-window baseline.
    pub window_t: usize,
    /// Key/value pooling factor `ρ`.
    pub rho: usize,
    pub shift: bool,
}

impl AttentionConfig {
    pub fn new(d: usize, heads: usize, window: usize, rho: usize) -> Self {
        AttentionConfig {
            d,
            heads,
            window_h: window,
            window_w: window,
            window_t: 1,
            rho,
            shift: false,
        }
    }

    pub fn shifted(mut self, shift: bool) -> Self {
        self.shift = shift;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Spatial window actually partitioned: `(ρh, ρw)`.
    pub fn window_extent(&self) -> (usize, usize) {
        (self.rho * self.window_h, self.rho * self.window_w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "channel width {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if self.window_h == 0 || self.window_w == 0 || self.window_t == 0 || self.rho == 0 {
            return Err(Error::Config("window extents and ρ must be positive".into()));
        }
        Ok(())
    }

    /// Initial value of both temperatures: `√(d / heads)`.
    pub fn default_tau(&self) -> f64 {
        libm::sqrt(self.head_dim() as f64)
    }
}

/// Projections and per-head temperatures of one attention layer.
///
/// Temperatures are stored as `ln τ` so they stay positive under training.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
    pub log_tau_spatial: Param,
    pub log_tau_temporal: Param,
}

impl_parameters!(AttentionParams {
    query,
    key,
    value,
    output,
    log_tau_spatial,
    log_tau_temporal
});

impl AttentionParams {
    pub fn init(init: &mut Init, cfg: &AttentionConfig, bias: bool) -> Self {
        let d = cfg.d;
        let log_tau = libm::log(cfg.default_tau());
        AttentionParams {
            query: LinearParams::init(init, d, d, bias),
            key: LinearParams::init(init, d, d, bias),
            value: LinearParams::init(init, d, d, bias),
            output: LinearParams::init(init, d, d, bias),
            log_tau_spatial: init.constant(&[cfg.heads], log_tau),
            log_tau_temporal: init.constant(&[cfg.heads], log_tau),
        }
    }

    /// Explicit projection matrices (`d × d`, no bias) and temperatures.
    #[allow(clippy::too_many_arguments)]
    pub fn from_matrices(
        init: &mut Init,
        wq: Tensor,
        wk: Tensor,
        wv: Tensor,
        wo: Tensor,
        tau_spatial: &[f64],
        tau_temporal: &[f64],
    ) -> Result<Self> {
        if tau_spatial.iter().chain(tau_temporal).any(|&t| !(t > 0.0)) {
            return Err(Error::Parameter("temperatures must be positive".into()));
        }
        let logs = |taus: &[f64]| Tensor::new(&[taus.len()], taus.iter().map(|&t| libm::log(t)).collect());
        Ok(AttentionParams {
            query: LinearParams::from_tensors(init, wq, None)?,
            key: LinearParams::from_tensors(init, wk, None)?,
            value: LinearParams::from_tensors(init, wv, None)?,
            output: LinearParams::from_tensors(init, wo, None)?,
            log_tau_spatial: init.wrap(logs(tau_spatial)?),
            log_tau_temporal: init.wrap(logs(tau_temporal)?),
        })
    }

    pub fn heads(&self) -> usize {
        self.log_tau_spatial.value.len()
    }

    pub fn tau_spatial(&self) -> Vec<f64> {
        self.log_tau_spatial.value.data().iter().map(|&v| libm::exp(v)).collect()
    }

    pub fn tau_temporal(&self) -> Vec<f64> {
        self.log_tau_temporal.value.data().iter().map(|&v| libm::exp(v)).collect()
    }

    pub(crate) fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        cfg.validate()?;
        for lin in [&self.query, &self.key, &self.value, &self.output] {
            if lin.d_in() != cfg.d || lin.d_out() != cfg.d {
                return Err(Error::dim("attention", "projections must map d → d", lin.weight.value.dims(), &[cfg.d]));
            }
        }
        if self.heads() != cfg.heads || self.log_tau_temporal.value.len() != cfg.heads {
            return Err(Error::Parameter(format!(
                "expected {} per-head temperatures, got {}",
                cfg.heads,
                self.heads()
            )));
        }
        Ok(())
    }

    pub fn closed_form_count(d: usize, heads: usize, bias: bool) -> usize {
        4 * LinearParams::closed_form_count(d, d, bias) + 2 * heads
    }
}

/// `1/τ` per head expanded to a per-channel vector of length `d`.
pub(crate) fn inverse_tau_channels(g: &mut Graph, log_tau: Var, d: usize, heads: usize) -> Result<Var> {
    let neg = g.mul_const(log_tau, -1.0);
    let inv = g.exp(neg);
    let dh = d / heads;
    g.gather_rows(inv, 1, (0..d).map(|c| c / dh).collect(), &[d])
}

/// `[G, L, heads·dh] → [G, heads, L, dh]`.
pub(crate) fn split_heads(g: &mut Graph, x: Var, groups: usize, len: usize, heads: usize, dh: usize) -> Result<Var> {
    let mut idx = Vec::with_capacity(groups * len * heads);
    for gi in 0..groups {
        for h in 0..heads {
            for l in 0..len {
                idx.push((gi * len + l) * heads + h);
            }
        }
    }
    g.gather_rows(x, dh, idx, &[groups, heads, len, dh])
}

/// `[G, heads, L, dh] → [G, L, heads·dh]`.
pub(crate) fn merge_heads(g: &mut Graph, x: Var, groups: usize, len: usize, heads: usize, dh: usize) -> Result<Var> {
    let mut idx = Vec::with_capacity(groups * len * heads);
    for gi in 0..groups {
        for l in 0..len {
            for h in 0..heads {
                idx.push((gi * heads + h) * len + l);
            }
        }
    }
    g.gather_rows(x, dh, idx, &[groups, len, heads * dh])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Parameters;

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(8, 3, 4, 1).validate().is_err());
        assert!(AttentionConfig::new(8, 2, 4, 0).validate().is_err());
        let cfg = AttentionConfig::new(8, 2, 4, 2);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.window_extent(), (8, 8));
        assert_eq!(cfg.default_tau(), 2.0);
    }

    #[test]
    fn param_count_closed_form() {
        let cfg = AttentionConfig::new(8, 2, 4, 1);
        let p = AttentionParams::init(&mut Init::new(1), &cfg, true);
        assert_eq!(p.param_count(), AttentionParams::closed_form_count(8, 2, true));
    }

    #[test]
    fn non_positive_tau_rejected() {
        let eye = || Tensor::ones(&[1, 1]);
        let r = AttentionParams::from_matrices(&mut Init::new(0), eye(), eye(), eye(), eye(), &[0.0], &[1.0]);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
