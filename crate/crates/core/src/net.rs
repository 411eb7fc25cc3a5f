//! End-to-end reconstruction network.
//!
//! `V̄ → extract (frame-wise) → downsample → blocks → upsample → skip fusion
//! → frame-wise reconstruction stack → 1 channel`. Nothing before the block
//! stack mixes the temporal axis.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{baseline_msa, AttentionConfig, AttentionParams, BaselineKind};
use crate::block::{hisvit_block, BlockConfig, BlockParams, BranchConfig};
use crate::error::{Error, Result};
use crate::layers::{impl_parameters, Conv2dParams, Init, LinearParams, NormParams};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Channel expansion of the MLP inside frame-wise layers.
pub const FRAME_MLP_RATIO: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSpec {
    pub rho: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub block_count: usize,
    pub branches: Vec<BranchSpec>,
    pub extractor_channels: usize,
    pub extractor_depth: usize,
    /// Base attention window (square) for every attention layer.
    pub window: usize,
    pub heads: usize,
    pub lambda: usize,
    pub output_channels: usize,
}

impl ModelConfig {
    /// Desk-scale configuration: 2 blocks, branches 4/4/8 for ρ = 1/2/4,
    /// 16 extractor channels, 4 × 4 windows.
    pub fn toy() -> Self {
        ModelConfig {
            block_count: 2,
            branches: alloc::vec![
                BranchSpec { rho: 1, channels: 4 },
                BranchSpec { rho: 2, channels: 4 },
                BranchSpec { rho: 4, channels: 8 },
            ],
            extractor_channels: 16,
            extractor_depth: 2,
            window: 4,
            heads: 2,
            lambda: 2,
            output_channels: 1,
        }
    }

    /// Smallest configuration that still exercises every component.
    pub fn tiny() -> Self {
        ModelConfig {
            block_count: 2,
            branches: alloc::vec![BranchSpec { rho: 1, channels: 2 }, BranchSpec { rho: 2, channels: 2 }],
            extractor_channels: 4,
            extractor_depth: 1,
            window: 2,
            heads: 1,
            lambda: 2,
            output_channels: 1,
        }
    }

    /// Width of the block stack, `Σ` branch channels.
    pub fn block_channels(&self) -> usize {
        self.branches.iter().map(|b| b.channels).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_count == 0 {
            return Err(Error::Config("block_count must be at least 1".into()));
        }
        if self.output_channels != 1 {
            return Err(Error::Config("only grayscale output (1 channel) is supported".into()));
        }
        if self.extractor_channels == 0 || self.extractor_depth == 0 || self.window == 0 {
            return Err(Error::Config("extractor width, depth and window must be positive".into()));
        }
        if !self.extractor_channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "extractor channels {} not divisible by {} heads",
                self.extractor_channels, self.heads
            )));
        }
        self.block_config(0)?;
        Ok(())
    }

    /// Checks that `H × W` frames fit the window geometry.
    pub fn validate_frame(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(Error::dim("reconstruct", "frame extents must be even", &[h, w], &[2]));
        }
        for b in &self.branches {
            let extent = b.rho * self.window;
            if !(h / 2).is_multiple_of(extent) || !(w / 2).is_multiple_of(extent) {
                return Err(Error::dim(
                    "reconstruct",
                    "downsampled frame must be divisible by every ρ·window",
                    &[h / 2, w / 2],
                    &[extent],
                ));
            }
        }
        if !h.is_multiple_of(self.window) || !w.is_multiple_of(self.window) {
            return Err(Error::dim("reconstruct", "frame must be divisible by the window", &[h, w], &[self.window]));
        }
        Ok(())
    }

    /// Block `i`; shift alternates, even blocks aligned.
    pub fn block_config(&self, i: usize) -> Result<BlockConfig> {
        let branches = self
            .branches
            .iter()
            .map(|b| BranchConfig::new(b.rho, b.channels, self.heads, self.window, self.lambda))
            .collect();
        Ok(BlockConfig::new(branches)?.with_shift(i % 2 == 1))
    }

    fn frame_attention(&self, layer: usize) -> AttentionConfig {
        AttentionConfig::new(self.extractor_channels, self.heads, self.window, 1).shifted(layer % 2 == 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayerParams {
    pub attn_norm: NormParams,
    pub attention: AttentionParams,
    pub mlp_norm: NormParams,
    pub mlp_in: LinearParams,
    pub mlp_out: LinearParams,
}

impl_parameters!(FrameLayerParams {
    attn_norm,
    attention,
    mlp_norm,
    mlp_in,
    mlp_out
});

/// Frame-wise residual stack: windowed 2D attention layers and a trailing
/// `3 × 3` convolution, wrapped in one long residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStackParams {
    pub layers: Vec<FrameLayerParams>,
    pub tail: Conv2dParams,
}

impl_parameters!(FrameStackParams { layers, tail });

impl FrameStackParams {
    fn init(init: &mut Init, cfg: &ModelConfig) -> Self {
        let c = cfg.extractor_channels;
        let layers = (0..cfg.extractor_depth)
            .map(|l| FrameLayerParams {
                attn_norm: NormParams::init(init, c),
                attention: AttentionParams::init(init, &cfg.frame_attention(l), true),
                mlp_norm: NormParams::init(init, c),
                mlp_in: LinearParams::init(init, c, FRAME_MLP_RATIO * c, true),
                mlp_out: LinearParams::init(init, FRAME_MLP_RATIO * c, c, true),
            })
            .collect();
        FrameStackParams {
            layers,
            tail: Conv2dParams::init(init, 3, c, c),
        }
    }

    fn closed_form_count(cfg: &ModelConfig) -> usize {
        let c = cfg.extractor_channels;
        let layer = 2 * NormParams::closed_form_count(c)
            + AttentionParams::closed_form_count(c, cfg.heads, true)
            + LinearParams::closed_form_count(c, FRAME_MLP_RATIO * c, true)
            + LinearParams::closed_form_count(FRAME_MLP_RATIO * c, c, true);
        cfg.extractor_depth * layer + Conv2dParams::closed_form_count(3, c, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub stem: Conv2dParams,
    pub extractor: FrameStackParams,
    pub down: Conv2dParams,
    pub blocks: Vec<BlockParams>,
    pub up: LinearParams,
    pub fuse: LinearParams,
    pub reconstruction: FrameStackParams,
    pub head: LinearParams,
}

impl_parameters!(NetParams {
    stem,
    extractor,
    down,
    blocks,
    up,
    fuse,
    reconstruction,
    head
});

impl NetParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let (c, cb) = (cfg.extractor_channels, cfg.block_channels());
        let stem = Conv2dParams::init(&mut init, 3, 1, c);
        let extractor = FrameStackParams::init(&mut init, cfg);
        let down = Conv2dParams::init(&mut init, 3, c, cb);
        let mut blocks = Vec::with_capacity(cfg.block_count);
        for i in 0..cfg.block_count {
            blocks.push(BlockParams::init(&mut init, &cfg.block_config(i)?));
        }
        Ok(NetParams {
            stem,
            extractor,
            down,
            blocks,
            up: LinearParams::init(&mut init, cb, 4 * c, true),
            fuse: LinearParams::init(&mut init, 2 * c, c, true),
            reconstruction: FrameStackParams::init(&mut init, cfg),
            head: LinearParams::init(&mut init, c, cfg.output_channels, true),
        })
    }

    /// Parameter count derived from the configuration alone.
    pub fn closed_form_count(cfg: &ModelConfig) -> Result<usize> {
        cfg.validate()?;
        let (c, cb) = (cfg.extractor_channels, cfg.block_channels());
        let mut n = Conv2dParams::closed_form_count(3, 1, c)
            + 2 * FrameStackParams::closed_form_count(cfg)
            + Conv2dParams::closed_form_count(3, c, cb)
            + LinearParams::closed_form_count(cb, 4 * c, true)
            + LinearParams::closed_form_count(2 * c, c, true)
            + LinearParams::closed_form_count(c, cfg.output_channels, true);
        for i in 0..cfg.block_count {
            n += BlockParams::closed_form_count(&cfg.block_config(i)?);
        }
        Ok(n)
    }
}

fn frame_stack(g: &mut Graph, x: Var, cfg: &ModelConfig, params: &FrameStackParams) -> Result<Var> {
    let mut h = x;
    for (l, layer) in params.layers.iter().enumerate() {
        let n = layer.attn_norm.forward(g, h)?;
        // one-frame 3D windows: attention never crosses frames
        let a = baseline_msa(g, BaselineKind::W3d, n, &cfg.frame_attention(l), core::slice::from_ref(&layer.attention))?;
        h = g.add(h, a)?;
        let n = layer.mlp_norm.forward(g, h)?;
        let m = layer.mlp_in.forward(g, n)?;
        let m = g.gelu(m);
        let m = layer.mlp_out.forward(g, m)?;
        h = g.add(h, m)?;
    }
    let t = params.tail.forward(g, h, 1)?;
    g.add(x, t)
}

fn check_input(g: &Graph, v: Var, cfg: &ModelConfig) -> Result<()> {
    match *g.dims(v) {
        [_, h, w, 1] => cfg.validate_frame(h, w),
        _ => Err(Error::dim("reconstruct", "expected T × H × W × 1", g.dims(v), &[])),
    }
}

/// `T × H × W × 1 → T × H × W × C`, processing each frame independently.
pub fn extract_features_framewise(g: &mut Graph, v: Var, cfg: &ModelConfig, params: &NetParams) -> Result<Var> {
    check_input(g, v, cfg)?;
    let x = params.stem.forward(g, v, 1)?;
    frame_stack(g, x, cfg, &params.extractor)
}

/// Stride-2 `3 × 3` convolution per frame, then GELU.
pub fn downsample(g: &mut Graph, x: Var, params: &NetParams) -> Result<Var> {
    let &[_, h, w, _] = g.dims(x) else {
        return Err(Error::dim("downsample", "expected T × H × W × C", g.dims(x), &[]));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("downsample", "frame extents must be even", g.dims(x), &[2]));
    }
    let y = params.down.forward(g, x, 2)?;
    Ok(g.gelu(y))
}

/// `1 × 1` linear to `4C` channels, then pixel shuffle by 2.
pub fn upsample(g: &mut Graph, x: Var, params: &NetParams) -> Result<Var> {
    let y = params.up.forward(g, x)?;
    g.pixel_shuffle(y, 2)
}

/// Full reconstruction `V̄ → V̂` on the tape.
pub fn reconstruct(g: &mut Graph, v: Var, cfg: &ModelConfig, params: &NetParams) -> Result<Var> {
    if params.blocks.len() != cfg.block_count {
        return Err(Error::Parameter(format!(
            "checkpoint has {} blocks, config {}",
            params.blocks.len(),
            cfg.block_count
        )));
    }
    let features = extract_features_framewise(g, v, cfg, params)?;
    let mut h = downsample(g, features, params)?;
    for (i, block) in params.blocks.iter().enumerate() {
        h = hisvit_block(g, h, &cfg.block_config(i)?, block)?;
    }
    let refined = upsample(g, h, params)?;
    let cat = g.concat(&[features, refined])?;
    let fused = params.fuse.forward(g, cat)?;
    let out = frame_stack(g, fused, cfg, &params.reconstruction)?;
    params.head.forward(g, out)
}

/// Inference without gradients; accepts `T × H × W` or `T × H × W × 1`.
pub fn reconstruct_video(v: &Tensor, cfg: &ModelConfig, params: &NetParams) -> Result<Tensor> {
    let v = match *v.dims() {
        [t, h, w] => v.reshape(&[t, h, w, 1])?,
        _ => v.clone(),
    };
    let mut g = Graph::new();
    let x = g.constant(v);
    let y = reconstruct(&mut g, x, cfg, params)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Parameters;

    #[test]
    fn closed_form_count_matches_toy_model() {
        let cfg = ModelConfig::toy();
        let p = NetParams::init(&cfg, 0).unwrap();
        assert_eq!(p.param_count(), NetParams::closed_form_count(&cfg).unwrap());
    }

    #[test]
    fn shifts_alternate() {
        let cfg = ModelConfig::toy();
        assert!(!cfg.block_config(0).unwrap().branches[0].attention.shift);
        assert!(cfg.block_config(1).unwrap().branches[0].attention.shift);
    }

    #[test]
    fn frame_geometry_checked() {
        let cfg = ModelConfig::toy();
        assert!(cfg.validate_frame(32, 32).is_ok());
        assert!(cfg.validate_frame(24, 32).is_err());
    }
}
