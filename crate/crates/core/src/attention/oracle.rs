//! Dense evaluation of separable attention through its explicit joint matrix.
//!
//! Written with plain loops and its own window arithmetic so it shares no code
//! path with the batched implementation it is used to check.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::layers::LinearParams;
use crate::tensor::Tensor;

pub const ORACLE_TOKEN_LIMIT: usize = 4096;

/// Factored and fused attention of one (window, head).
///
/// Joint rows are indexed `(t, p)` frame-major over the window's `P`
/// positions; columns `(t′, q)` over the `Q` pooled positions. Entry
/// `((t, p), (t′, q)) = temporal[p](t, t′) · spatial[t′](p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAttention {
    pub window: usize,
    pub head: usize,
    pub frames: usize,
    pub positions: usize,
    pub pooled: usize,
    /// `[t][p][q]`
    pub spatial: Vec<f64>,
    /// `[p][t][t′]`
    pub temporal: Vec<f64>,
    /// `(T·P) × (T·Q)` row-major.
    pub joint: Vec<f64>,
}

impl JointAttention {
    pub fn rows(&self) -> usize {
        self.frames * self.positions
    }

    pub fn cols(&self) -> usize {
        self.frames * self.pooled
    }

    pub fn entry(&self, t: usize, p: usize, t2: usize, q: usize) -> f64 {
        self.joint[(t * self.positions + p) * self.cols() + t2 * self.pooled + q]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.joint.chunks_exact(self.cols()).map(|r| r.iter().sum()).collect()
    }

    /// Joint weight mass a query `(t, p)` puts on tokens of its own frame.
    pub fn same_frame_mass(&self, t: usize, p: usize) -> f64 {
        (0..self.pooled).map(|q| self.entry(t, p, t, q)).sum()
    }

    pub fn temporal_weight(&self, p: usize, t: usize, t2: usize) -> f64 {
        self.temporal[(p * self.frames + t) * self.frames + t2]
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![self.rows(), self.cols()], self.joint.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub output: Tensor,
    /// Ordered by window, then head.
    pub windows: Vec<JointAttention>,
}

fn project(lin: &LinearParams, token: &[f64]) -> Vec<f64> {
    let (din, dout) = (lin.d_in(), lin.d_out());
    let w = lin.weight.value.data();
    (0..dout)
        .map(|j| {
            let mut s = lin.bias.as_ref().map_or(0.0, |b| b.value.data()[j]);
            for i in 0..din {
                s += token[i] * w[i * dout + j];
            }
            s
        })
        .collect()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - m);
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

fn source_coord(window: usize, local: usize, win: usize, shift: usize, padded: usize, n: usize) -> usize {
    let rolled = (window * win + local + shift) % padded;
    if rolled < n {
        rolled
    } else {
        2 * (n - 1) - rolled
    }
}

/// Separable attention computed through explicit per-window joint matrices.
pub fn joint_attention_oracle(x: &Tensor, cfg: &AttentionConfig, params: &AttentionParams) -> Result<OracleOutput> {
    params.check(cfg)?;
    let &[t_n, h_n, w_n, d] = x.dims() else {
        return Err(Error::dim("joint_attention_oracle", "expected T × H × W × d", x.dims(), &[]));
    };
    if d != cfg.d {
        return Err(Error::dim("joint_attention_oracle", "channel width differs from config", x.dims(), &[cfg.d]));
    }
    if t_n * h_n * w_n > ORACLE_TOKEN_LIMIT {
        return Err(Error::Resource(format!(
            "oracle is limited to {ORACLE_TOKEN_LIMIT} tokens, got {}",
            t_n * h_n * w_n
        )));
    }
    let rho = cfg.rho;
    let (wh, ww) = (rho * cfg.window_h, rho * cfg.window_w);
    let (hp, wp) = (h_n.div_ceil(wh) * wh, w_n.div_ceil(ww) * ww);
    if hp - h_n >= h_n || wp - w_n >= w_n {
        return Err(Error::dim("joint_attention_oracle", "window larger than the reflect-padded frame", x.dims(), &[wh, ww]));
    }
    let (sh, sw) = if cfg.shift { (wh / 2, ww / 2) } else { (0, 0) };
    let (ny, nx) = (hp / wh, wp / ww);
    let (ph, pw) = (cfg.window_h, cfg.window_w);
    let positions = wh * ww;
    let pooled = ph * pw;
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let tau1 = params.tau_spatial();
    let tau2 = params.tau_temporal();

    let pixel = |t: usize, y: usize, xx: usize| -> &[f64] {
        let o = ((t * h_n + y) * w_n + xx) * d;
        &x.data()[o..o + d]
    };

    // per window: output tokens [t][p][d]
    let mut window_out: Vec<Vec<f64>> = Vec::with_capacity(ny * nx);
    let mut windows = Vec::with_capacity(ny * nx * heads);
    for wy in 0..ny {
        for wx in 0..nx {
            let window = wy * nx + wx;
            let mut q = vec![vec![Vec::new(); positions]; t_n];
            let mut k = vec![vec![Vec::new(); positions]; t_n];
            let mut v = vec![vec![Vec::new(); positions]; t_n];
            for t in 0..t_n {
                for ly in 0..wh {
                    let y = source_coord(wy, ly, wh, sh, hp, h_n);
                    for lx in 0..ww {
                        let xx = source_coord(wx, lx, ww, sw, wp, w_n);
                        let tok = pixel(t, y, xx);
                        let p = ly * ww + lx;
                        q[t][p] = project(&params.query, tok);
                        k[t][p] = project(&params.key, tok);
                        v[t][p] = project(&params.value, tok);
                    }
                }
            }
            // pooled keys/values [t][q][d]
            let mut kp = vec![vec![vec![0.0; d]; pooled]; t_n];
            let mut vp = vec![vec![vec![0.0; d]; pooled]; t_n];
            let norm = 1.0 / (rho * rho) as f64;
            for t in 0..t_n {
                for ly in 0..wh {
                    for lx in 0..ww {
                        let qi = (ly / rho) * pw + lx / rho;
                        let p = ly * ww + lx;
                        for c in 0..d {
                            kp[t][qi][c] += k[t][p][c] * norm;
                            vp[t][qi][c] += v[t][p][c] * norm;
                        }
                    }
                }
            }
            let mut out = vec![0.0; t_n * positions * d];
            for head in 0..heads {
                let ch = head * dh..(head + 1) * dh;
                let dot = |a: &[f64], b: &[f64]| -> f64 { ch.clone().map(|c| a[c] * b[c]).sum() };
                let mut spatial = vec![0.0; t_n * positions * pooled];
                for t in 0..t_n {
                    for p in 0..positions {
                        let row = &mut spatial[(t * positions + p) * pooled..(t * positions + p + 1) * pooled];
                        for (qi, r) in row.iter_mut().enumerate() {
                            *r = dot(&q[t][p], &kp[t][qi]) / tau1[head];
                        }
                        softmax_in_place(row);
                    }
                }
                let mut temporal = vec![0.0; positions * t_n * t_n];
                for p in 0..positions {
                    for t in 0..t_n {
                        let row = &mut temporal[(p * t_n + t) * t_n..(p * t_n + t + 1) * t_n];
                        for (t2, r) in row.iter_mut().enumerate() {
                            *r = dot(&q[t][p], &k[t2][p]) / tau2[head];
                        }
                        softmax_in_place(row);
                    }
                }
                let cols = t_n * pooled;
                let mut joint = vec![0.0; t_n * positions * cols];
                for t in 0..t_n {
                    for p in 0..positions {
                        for t2 in 0..t_n {
                            let a_t = temporal[(p * t_n + t) * t_n + t2];
                            for qi in 0..pooled {
                                joint[(t * positions + p) * cols + t2 * pooled + qi] =
                                    a_t * spatial[(t2 * positions + p) * pooled + qi];
                            }
                        }
                    }
                }
                // one dense product of the joint matrix with the pooled values
                for row in 0..t_n * positions {
                    for c in ch.clone() {
                        let mut s = 0.0;
                        for t2 in 0..t_n {
                            for qi in 0..pooled {
                                s += joint[row * cols + t2 * pooled + qi] * vp[t2][qi][c];
                            }
                        }
                        out[row * d + c] = s;
                    }
                }
                windows.push(JointAttention {
                    window,
                    head,
                    frames: t_n,
                    positions,
                    pooled,
                    spatial,
                    temporal,
                    joint,
                });
            }
            let projected: Vec<f64> = out.chunks_exact(d).flat_map(|tok| project(&params.output, tok)).collect();
            window_out.push(projected);
        }
    }

    let mut output = vec![0.0; t_n * h_n * w_n * d];
    for t in 0..t_n {
        for y in 0..h_n {
            let ry = (y + hp - sh) % hp;
            for xx in 0..w_n {
                let rx = (xx + wp - sw) % wp;
                let window = (ry / wh) * nx + rx / ww;
                let p = (ry % wh) * ww + rx % ww;
                let src = &window_out[window][(t * positions + p) * d..(t * positions + p + 1) * d];
                let dst = ((t * h_n + y) * w_n + xx) * d;
                output[dst..dst + d].copy_from_slice(src);
            }
        }
    }
    Ok(OracleOutput {
        output: Tensor::new(&[t_n, h_n, w_n, d], output)?,
        windows,
    })
}
