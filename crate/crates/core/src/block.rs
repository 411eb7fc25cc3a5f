//! The multi-branch block: per-branch residual units built from cross-scale
//! attention and the gated spatial-temporal feed-forward network, joined by
//! dense channel connections and a trailing squeeze-excitation gate.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{css_msa, AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::layers::{impl_parameters, Conv2dParams, ConvTemporalParams, Init, LinearParams, NormParams};
use crate::tape::{Graph, Var};

/// Temporal and spatial kernel extents of the factorized convolution.
pub const STCONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchConfig {
    pub rho: usize,
    pub channels: usize,
    pub attention: AttentionConfig,
    pub lambda: usize,
}

impl BranchConfig {
    /// Branch of `channels` width whose attention partitions `ρ·window` squares.
    pub fn new(rho: usize, channels: usize, heads: usize, window: usize, lambda: usize) -> Self {
        BranchConfig {
            rho,
            channels,
            attention: AttentionConfig::new(channels, heads, window, rho),
            lambda,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lambda * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.lambda == 0 {
            return Err(Error::Config("branch width and λ must be positive".into()));
        }
        if !self.hidden().is_multiple_of(2) {
            return Err(Error::Config(format!("λ·C = {} must be even", self.hidden())));
        }
        if self.attention.d != self.channels || self.attention.rho != self.rho {
            return Err(Error::Config("attention config disagrees with branch".into()));
        }
        self.attention.validate()
    }
}

/// Branches of one block, stored bottom (largest ρ) to top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockConfig {
    pub branches: Vec<BranchConfig>,
}

impl BlockConfig {
    /// Orders branches by descending ρ; equal ρ keep their given order.
    pub fn new(mut branches: Vec<BranchConfig>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Config("a block needs at least one branch".into()));
        }
        for b in &branches {
            b.validate()?;
        }
        branches.sort_by(|a, b| b.rho.cmp(&a.rho));
        Ok(BlockConfig { branches })
    }

    pub fn channels(&self) -> usize {
        self.branches.iter().map(|b| b.channels).sum()
    }

    pub fn with_shift(mut self, shift: bool) -> Self {
        for b in &mut self.branches {
            b.attention.shift = shift;
        }
        self
    }
}

/// Squeeze-excitation bottleneck width for `c` channels.
pub fn se_hidden(c: usize) -> usize {
    (c / 4).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StConvParams {
    pub temporal: ConvTemporalParams,
    pub spatial: Conv2dParams,
}

impl_parameters!(StConvParams { temporal, spatial });

impl StConvParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        StConvParams {
            temporal: ConvTemporalParams::init(init, STCONV_KERNEL, c, c),
            spatial: Conv2dParams::init(init, STCONV_KERNEL, c, c),
        }
    }

    pub fn closed_form_count(c: usize) -> usize {
        ConvTemporalParams::closed_form_count(STCONV_KERNEL, c, c) + Conv2dParams::closed_form_count(STCONV_KERNEL, c, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsmFfnParams {
    pub expand: LinearParams,
    pub stconv: StConvParams,
    pub reduce: LinearParams,
}

impl_parameters!(GsmFfnParams { expand, stconv, reduce });

impl GsmFfnParams {
    pub fn init(init: &mut Init, c: usize, lambda: usize) -> Self {
        let half = lambda * c / 2;
        GsmFfnParams {
            expand: LinearParams::init(init, c, lambda * c, true),
            stconv: StConvParams::init(init, half),
            reduce: LinearParams::init(init, half, c, true),
        }
    }

    pub fn closed_form_count(c: usize, lambda: usize) -> usize {
        let half = lambda * c / 2;
        LinearParams::closed_form_count(c, lambda * c, true)
            + StConvParams::closed_form_count(half)
            + LinearParams::closed_form_count(half, c, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    /// Maps `[portion, earlier outputs…]` back to the portion width; absent on the first branch.
    pub fusion: Option<LinearParams>,
    pub attn_norm: NormParams,
    pub attention: AttentionParams,
    pub ffn_norm: NormParams,
    pub ffn: GsmFfnParams,
}

impl_parameters!(BranchParams {
    fusion,
    attn_norm,
    attention,
    ffn_norm,
    ffn
});

impl BranchParams {
    pub fn init(init: &mut Init, cfg: &BranchConfig, earlier: usize) -> Self {
        let c = cfg.channels;
        BranchParams {
            fusion: (earlier > 0).then(|| LinearParams::init(init, c + earlier, c, true)),
            attn_norm: NormParams::init(init, c),
            attention: AttentionParams::init(init, &cfg.attention, true),
            ffn_norm: NormParams::init(init, c),
            ffn: GsmFfnParams::init(init, c, cfg.lambda),
        }
    }

    pub fn closed_form_count(cfg: &BranchConfig, earlier: usize) -> usize {
        let c = cfg.channels;
        let fusion = if earlier > 0 {
            LinearParams::closed_form_count(c + earlier, c, true)
        } else {
            0
        };
        fusion
            + 2 * NormParams::closed_form_count(c)
            + AttentionParams::closed_form_count(c, cfg.attention.heads, true)
            + GsmFfnParams::closed_form_count(c, cfg.lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams {
    pub squeeze: LinearParams,
    pub excite: LinearParams,
}

impl_parameters!(ChannelAttentionParams { squeeze, excite });

impl ChannelAttentionParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        ChannelAttentionParams {
            squeeze: LinearParams::init(init, c, se_hidden(c), true),
            excite: LinearParams::init(init, se_hidden(c), c, true),
        }
    }

    pub fn closed_form_count(c: usize) -> usize {
        LinearParams::closed_form_count(c, se_hidden(c), true) + LinearParams::closed_form_count(se_hidden(c), c, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub branches: Vec<BranchParams>,
    pub channel_attention: ChannelAttentionParams,
}

impl_parameters!(BlockParams {
    branches,
    channel_attention
});

impl BlockParams {
    pub fn init(init: &mut Init, cfg: &BlockConfig) -> Self {
        let mut earlier = 0;
        let mut branches = Vec::with_capacity(cfg.branches.len());
        for b in &cfg.branches {
            branches.push(BranchParams::init(init, b, earlier));
            earlier += b.channels;
        }
        BlockParams {
            branches,
            channel_attention: ChannelAttentionParams::init(init, cfg.channels()),
        }
    }

    pub fn closed_form_count(cfg: &BlockConfig) -> usize {
        let mut earlier = 0;
        let mut n = 0;
        for b in &cfg.branches {
            n += BranchParams::closed_form_count(b, earlier);
            earlier += b.channels;
        }
        n + ChannelAttentionParams::closed_form_count(cfg.channels())
    }

    fn check(&self, cfg: &BlockConfig) -> Result<()> {
        if self.branches.len() != cfg.branches.len() {
            return Err(Error::Parameter(format!(
                "block has {} branch parameter sets for {} branches",
                self.branches.len(),
                cfg.branches.len()
            )));
        }
        Ok(())
    }
}

/// Parallel temporal (`k = 3` along T) and spatial (`3 × 3`) convolutions,
/// each followed by LeakyReLU, summed.
pub fn st_conv(g: &mut Graph, x: Var, params: &StConvParams) -> Result<Var> {
    let t = params.temporal.forward(g, x)?;
    let t = g.leaky_relu(t);
    let s = params.spatial.forward(g, x, 1)?;
    let s = g.leaky_relu(s);
    g.add(t, s)
}

/// Gated feed-forward: `(σ(X₁) ⊙ STConv(X₂))·W₂` with
/// `[X₁, X₂] = GELU(x·W₁)` split in channel halves (gate first).
pub fn gsm_ffn(g: &mut Graph, x: Var, params: &GsmFfnParams) -> Result<Var> {
    let c = g.value(x).last_dim();
    if params.expand.d_in() != c || params.reduce.d_out() != c {
        return Err(Error::dim("gsm_ffn", "width does not match W₁/W₂", g.dims(x), params.expand.weight.value.dims()));
    }
    let hidden = params.expand.d_out();
    if !hidden.is_multiple_of(2) || params.reduce.d_in() != hidden / 2 {
        return Err(Error::dim("gsm_ffn", "W₂ must take half of W₁'s output", params.expand.weight.value.dims(), params.reduce.weight.value.dims()));
    }
    let h = params.expand.forward(g, x)?;
    let h = g.gelu(h);
    let x1 = g.slice_channels(h, 0, hidden / 2)?;
    let x2 = g.slice_channels(h, hidden / 2, hidden / 2)?;
    let gate = g.sigmoid(x1);
    let conv = st_conv(g, x2, &params.stconv)?;
    let mixed = g.mul(gate, conv)?;
    params.reduce.forward(g, mixed)
}

/// Pre-norm residual unit: `y = x + CSS(LN(x))`, then `y + GSM(LN(y))`.
pub fn branch_unit(g: &mut Graph, x: Var, cfg: &BranchConfig, params: &BranchParams) -> Result<Var> {
    cfg.validate()?;
    let n = params.attn_norm.forward(g, x)?;
    let a = css_msa(g, n, &cfg.attention, &params.attention)?;
    let y = g.add(x, a)?;
    let n = params.ffn_norm.forward(g, y)?;
    let f = gsm_ffn(g, n, &params.ffn)?;
    g.add(y, f)
}

/// Squeeze-excitation: mean over all tokens, bottleneck, GELU, expand, sigmoid,
/// per-channel scale.
pub fn channel_attention(g: &mut Graph, x: Var, params: &ChannelAttentionParams) -> Result<Var> {
    let c = g.value(x).last_dim();
    if params.squeeze.d_in() != c || params.excite.d_out() != c {
        return Err(Error::dim("channel_attention", "width does not match gate", g.dims(x), params.squeeze.weight.value.dims()));
    }
    let pooled = g.mean_tokens(x);
    let s = params.squeeze.forward(g, pooled)?;
    let s = g.gelu(s);
    let e = params.excite.forward(g, s)?;
    let scale = g.sigmoid(e);
    let scale = g.reshape(scale, &[c])?;
    g.mul_channel(x, scale)
}

/// Multi-branch block on `T × H × W × ΣC`.
///
/// Channel portions are consumed bottom (largest ρ) first. Every later branch
/// sees its portion concatenated with all earlier branch outputs, linearly
/// fused back to its width. Branch outputs are concatenated and gated by
/// channel attention.
pub fn hisvit_block(g: &mut Graph, x: Var, cfg: &BlockConfig, params: &BlockParams) -> Result<Var> {
    params.check(cfg)?;
    let total = cfg.channels();
    if g.value(x).last_dim() != total {
        return Err(Error::dim("hisvit_block", "channels must equal the branch sum", g.dims(x), &[total]));
    }
    let mut offset = 0;
    let mut outputs: Vec<Var> = Vec::with_capacity(cfg.branches.len());
    for (b, p) in cfg.branches.iter().zip(&params.branches) {
        let portion = g.slice_channels(x, offset, b.channels)?;
        offset += b.channels;
        let input = match &p.fusion {
            Some(fusion) => {
                let mut parts = Vec::with_capacity(outputs.len() + 1);
                parts.push(portion);
                parts.extend_from_slice(&outputs);
                let cat = g.concat(&parts)?;
                fusion.forward(g, cat)?
            }
            None if outputs.is_empty() => portion,
            None => return Err(Error::Parameter("later branches need a fusion map".into())),
        };
        outputs.push(branch_unit(g, input, b, p)?);
    }
    let joined = if outputs.len() == 1 { outputs[0] } else { g.concat(&outputs)? };
    channel_attention(g, joined, &params.channel_attention)
}
