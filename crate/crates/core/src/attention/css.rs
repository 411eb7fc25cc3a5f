use alloc::vec::Vec;

use super::window::WindowLayout;
use super::{inverse_tau_channels, merge_heads, split_heads, AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::tape::{Graph, Var};

/// Query/key/value projections of a token stack `[.., d]`.
pub fn project_qkv(g: &mut Graph, x: Var, params: &AttentionParams) -> Result<(Var, Var, Var)> {
    let d = g.value(x).last_dim();
    if params.query.d_in() != d {
        return Err(Error::dim("project_qkv", "token width does not match projections", g.dims(x), params.query.weight.value.dims()));
    }
    let q = params.query.forward(g, x)?;
    let k = params.key.forward(g, x)?;
    let v = params.value.forward(g, x)?;
    Ok((q, k, v))
}

/// Swaps the two middle axes of `[A, B, C, D, dh]` stored as rows of `dh`.
fn swap_axes(g: &mut Graph, x: Var, a: usize, b: usize, c: usize, d: usize, dh: usize) -> Result<Var> {
    let mut idx = Vec::with_capacity(a * b * c * d);
    for ai in 0..a {
        for bi in 0..b {
            for di in 0..d {
                for ci in 0..c {
                    idx.push(((ai * b + bi) * c + ci) * d + di);
                }
            }
        }
    }
    g.gather_rows(x, dh, idx, &[a, b, d, c, dh])
}

/// Cross-scale separable multi-head self-attention on a `T × H × W × d` feature.
///
/// Per `ρh × ρw` window: keys/values are average-pooled to `h × w` (when
/// `ρ > 1`), each frame runs spatial attention of full-resolution queries
/// against the pooled tokens, then each spatial position runs temporal
/// attention over all `T` frames on the spatial result. Heads split channels
/// evenly, each head has its own `τ₁`, `τ₂`. Output shape equals input shape.
pub fn css_msa(g: &mut Graph, x: Var, cfg: &AttentionConfig, params: &AttentionParams) -> Result<Var> {
    params.check(cfg)?;
    let &[t, h, w, d] = g.dims(x) else {
        return Err(Error::dim("css_msa", "expected T × H × W × d", g.dims(x), &[]));
    };
    if d != cfg.d {
        return Err(Error::dim("css_msa", "channel width differs from config", g.dims(x), &[cfg.d]));
    }
    let (wh, ww) = cfg.window_extent();
    let layout = WindowLayout::new(t, h, w, t, wh, ww, cfg.shift)?;
    let n = layout.groups();
    let (heads, dh, rho) = (cfg.heads, cfg.head_dim(), cfg.rho);
    let positions = wh * ww;
    let pooled = cfg.window_h * cfg.window_w;

    let tokens = layout.partition(g, x)?;
    let (q, k, v) = project_qkv(g, tokens, params)?;

    let (k_pool, v_pool) = if rho > 1 {
        let k4 = g.reshape(k, &[n * t, wh, ww, d])?;
        let v4 = g.reshape(v, &[n * t, wh, ww, d])?;
        let kp = g.avg_pool(k4, rho)?;
        let vp = g.avg_pool(v4, rho)?;
        (g.reshape(kp, &[n, t * pooled, d])?, g.reshape(vp, &[n, t * pooled, d])?)
    } else {
        (k, v)
    };

    let log_tau1 = g.param(&params.log_tau_spatial);
    let log_tau2 = g.param(&params.log_tau_temporal);
    let inv1 = inverse_tau_channels(g, log_tau1, d, heads)?;
    let inv2 = inverse_tau_channels(g, log_tau2, d, heads)?;
    let q_sp = g.mul_channel(q, inv1)?;
    let q_tm = g.mul_channel(q, inv2)?;

    // spatial pass, batched over (window, head, frame)
    let q_sp = split_heads(g, q_sp, n, t * positions, heads, dh)?;
    let q_sp = g.reshape(q_sp, &[n, heads, t, positions, dh])?;
    let k_sp = split_heads(g, k_pool, n, t * pooled, heads, dh)?;
    let k_sp = g.reshape(k_sp, &[n, heads, t, pooled, dh])?;
    let v_sp = split_heads(g, v_pool, n, t * pooled, heads, dh)?;
    let v_sp = g.reshape(v_sp, &[n, heads, t, pooled, dh])?;
    let scores = g.matmul_batched(q_sp, k_sp, true)?;
    let attn = g.softmax(scores);
    let v_prime = g.matmul_batched(attn, v_sp, false)?;

    // temporal pass, batched over (window, head, position)
    let q_tm = split_heads(g, q_tm, n, t * positions, heads, dh)?;
    let q_tm = swap_axes(g, q_tm, n, heads, t, positions, dh)?;
    let k_full = split_heads(g, k, n, t * positions, heads, dh)?;
    let k_tm = swap_axes(g, k_full, n, heads, t, positions, dh)?;
    let v_tm = swap_axes(g, v_prime, n, heads, t, positions, dh)?;
    // reductions over frames are order-free so frame permutations commute exactly
    let scores = g.matmul_batched(q_tm, k_tm, true)?;
    let attn = g.softmax_order_free(scores);
    let v_second = g.matmul_order_free(attn, v_tm)?;

    let back = swap_axes(g, v_second, n, heads, positions, t, dh)?;
    let back = g.reshape(back, &[n, heads, t * positions, dh])?;
    let merged = merge_heads(g, back, n, t * positions, heads, dh)?;
    let y = params.output.forward(g, merged)?;
    layout.merge(g, y)
}
