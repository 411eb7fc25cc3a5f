use alloc::format;
use core::str::FromStr;

use super::window::WindowLayout;
use super::{inverse_tau_channels, merge_heads, split_heads, AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::tape::{Graph, Var};

/// Comparison attention kinds. None of them pools keys or values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Joint attention inside `t × h × w` windows.
    W3d,
    /// Joint attention over all frames inside `h × w` spatial windows.
    Sw,
    /// Spatial windowed attention layer, then a temporal global attention layer.
    Fw,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w3d" => Ok(BaselineKind::W3d),
            "sw" => Ok(BaselineKind::Sw),
            "fw" => Ok(BaselineKind::Fw),
            other => Err(Error::Config(format!("unknown attention kind `{other}`"))),
        }
    }
}

impl BaselineKind {
    /// Number of independent attention layers (each with its own projections).
    pub fn layers(self) -> usize {
        match self {
            BaselineKind::Fw => 2,
            _ => 1,
        }
    }
}

/// Plain multi-head attention among the tokens of each group of `layout`.
/// Scores are divided by the per-head spatial temperature.
pub(crate) fn grouped_attention(
    g: &mut Graph,
    x: Var,
    layout: &WindowLayout,
    heads: usize,
    params: &AttentionParams,
) -> Result<Var> {
    let d = g.value(x).last_dim();
    let (groups, len, dh) = (layout.groups(), layout.group_len(), d / heads);
    let tokens = layout.partition(g, x)?;
    let (q, k, v) = super::project_qkv(g, tokens, params)?;
    let log_tau = g.param(&params.log_tau_spatial);
    let inv = inverse_tau_channels(g, log_tau, d, heads)?;
    let q = g.mul_channel(q, inv)?;
    let q = split_heads(g, q, groups, len, heads, dh)?;
    let k = split_heads(g, k, groups, len, heads, dh)?;
    let v = split_heads(g, v, groups, len, heads, dh)?;
    let scores = g.matmul_batched(q, k, true)?;
    let attn = g.softmax(scores);
    let out = g.matmul_batched(attn, v, false)?;
    let out = merge_heads(g, out, groups, len, heads, dh)?;
    let y = params.output.forward(g, out)?;
    layout.merge(g, y)
}

/// Runs one of the comparison kinds. `params` holds one entry per layer
/// (see [`BaselineKind::layers`]); spatial windows are `window_h × window_w`
/// and the 3D kind uses `window_t` frames.
pub fn baseline_msa(
    g: &mut Graph,
    kind: BaselineKind,
    x: Var,
    cfg: &AttentionConfig,
    params: &[AttentionParams],
) -> Result<Var> {
    if params.len() != kind.layers() {
        return Err(Error::Config(format!(
            "{kind:?} needs {} parameter sets, got {}",
            kind.layers(),
            params.len()
        )));
    }
    for p in params {
        p.check(cfg)?;
    }
    let &[t, h, w, d] = g.dims(x) else {
        return Err(Error::dim("baseline_msa", "expected T × H × W × d", g.dims(x), &[]));
    };
    if d != cfg.d {
        return Err(Error::dim("baseline_msa", "channel width differs from config", g.dims(x), &[cfg.d]));
    }
    let (wh, ww) = (cfg.window_h, cfg.window_w);
    match kind {
        BaselineKind::W3d => {
            let layout = WindowLayout::new(t, h, w, cfg.window_t, wh, ww, cfg.shift)?;
            grouped_attention(g, x, &layout, cfg.heads, &params[0])
        }
        BaselineKind::Sw => {
            let layout = WindowLayout::new(t, h, w, t, wh, ww, cfg.shift)?;
            grouped_attention(g, x, &layout, cfg.heads, &params[0])
        }
        BaselineKind::Fw => {
            let spatial = WindowLayout::new(t, h, w, 1, wh, ww, cfg.shift)?;
            let y = grouped_attention(g, x, &spatial, cfg.heads, &params[0])?;
            let temporal = WindowLayout::new(t, h, w, t, 1, 1, false)?;
            grouped_attention(g, y, &temporal, cfg.heads, &params[1])
        }
    }
}
