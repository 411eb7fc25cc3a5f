use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::attention::{baseline_msa, css_msa, AttentionConfig, AttentionParams, BaselineKind};
use crate::error::{Error, Result};
use crate::layers::{Init, Parameters};
use crate::net::{ModelConfig, NetParams};
use crate::rng::Philox;
use crate::tape::Graph;
use crate::tensor::Tensor;

/// Attention variants with a complexity formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MsaKind {
    /// Global attention over all `THW` tokens.
    G,
    /// 3D windows `t × h × w`.
    W3d,
    /// Factorized global: spatial over `HW`, then temporal over `T`.
    F,
    /// `h × w` windows spanning all frames.
    Sw,
    /// Factorized windowed: spatial `h × w` windows, then temporal over `T`.
    Fw,
    /// Cross-scale separable.
    Css,
}

impl MsaKind {
    pub const ALL: [MsaKind; 6] = [MsaKind::G, MsaKind::W3d, MsaKind::F, MsaKind::Sw, MsaKind::Fw, MsaKind::Css];

    pub fn is_executable(self) -> bool {
        !matches!(self, MsaKind::G | MsaKind::F)
    }
}

impl FromStr for MsaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "g" => MsaKind::G,
            "w3d" => MsaKind::W3d,
            "f" => MsaKind::F,
            "sw" => MsaKind::Sw,
            "fw" => MsaKind::Fw,
            "css" => MsaKind::Css,
            other => return Err(Error::Config(format!("unknown attention kind `{other}`"))),
        })
    }
}

impl fmt::Display for MsaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MsaKind::G => "g",
            MsaKind::W3d => "w3d",
            MsaKind::F => "f",
            MsaKind::Sw => "sw",
            MsaKind::Fw => "fw",
            MsaKind::Css => "css",
        })
    }
}

/// Input `T × H × W × d` plus the window fields the kind needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityQuery {
    pub kind: MsaKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub d: usize,
    pub t: Option<usize>,
    pub h: Option<usize>,
    pub w: Option<usize>,
    pub rho: Option<usize>,
}

impl ComplexityQuery {
    pub fn new(kind: MsaKind, frames: usize, height: usize, width: usize, d: usize) -> Self {
        ComplexityQuery {
            kind,
            frames,
            height,
            width,
            d,
            t: None,
            h: None,
            w: None,
            rho: None,
        }
    }

    pub fn window(mut self, h: usize, w: usize) -> Self {
        self.h = Some(h);
        self.w = Some(w);
        self
    }

    pub fn temporal_window(mut self, t: usize) -> Self {
        self.t = Some(t);
        self
    }

    pub fn pooling(mut self, rho: usize) -> Self {
        self.rho = Some(rho);
        self
    }

    fn need(&self, field: Option<usize>, name: &str) -> Result<u64> {
        match field {
            Some(v) if v > 0 => Ok(v as u64),
            Some(_) => Err(Error::Config(format!("{name} must be positive for {}", self.kind))),
            None => Err(Error::Config(format!("{} needs window field `{name}`", self.kind))),
        }
    }
}

/// Table-style MAC count of one attention layer on `T × H × W × d`.
///
/// Projections cost `4THWd²` (`8THWd²` for two-layer kinds); the rest is the
/// score and value products.
pub fn analytic_macs(q: &ComplexityQuery) -> Result<u64> {
    let (t_, h_, w_, d) = (q.frames as u64, q.height as u64, q.width as u64, q.d as u64);
    if t_ == 0 || h_ == 0 || w_ == 0 || d == 0 {
        return Err(Error::Config("extents must be positive".into()));
    }
    let hw_ = h_ * w_;
    let proj = 4 * t_ * hw_ * d * d;
    Ok(match q.kind {
        MsaKind::G => proj + 2 * (t_ * hw_) * (t_ * hw_) * d,
        MsaKind::W3d => {
            let (t, h, w) = (q.need(q.t, "t")?, q.need(q.h, "h")?, q.need(q.w, "w")?);
            proj + 2 * t * h * w * t_ * hw_ * d
        }
        MsaKind::F => 2 * proj + 2 * t_ * t_ * hw_ * d + 2 * t_ * hw_ * hw_ * d,
        MsaKind::Sw => {
            let (h, w) = (q.need(q.h, "h")?, q.need(q.w, "w")?);
            proj + 2 * h * w * t_ * t_ * hw_ * d
        }
        MsaKind::Fw => {
            let (h, w) = (q.need(q.h, "h")?, q.need(q.w, "w")?);
            2 * proj + 2 * t_ * t_ * hw_ * d + 2 * h * w * t_ * hw_ * d
        }
        MsaKind::Css => {
            let (h, w, rho) = (q.need(q.h, "h")?, q.need(q.w, "w")?, q.need(q.rho, "rho")?);
            if hw_ % (rho * rho) != 0 {
                return Err(Error::Config(format!("ρ² = {} must divide HW = {hw_}", rho * rho)));
            }
            proj + 2 * t_ * t_ * hw_ * d + 2 * h * w * t_ * (hw_ / (rho * rho)) * d
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacVerification {
    pub analytic: u64,
    pub instrumented: u64,
    /// Parameter count of the executed layer(s).
    pub params: usize,
}

impl MacVerification {
    pub fn equal(&self) -> bool {
        self.analytic == self.instrumented
    }
}

fn divides(op: &'static str, a: usize, b: usize, what: &str) -> Result<()> {
    if a == 0 || !b.is_multiple_of(a) {
        return Err(Error::Config(format!("{op}: {what} {a} must divide {b}")));
    }
    Ok(())
}

/// Runs the executable kind with one head and no biases under the MAC counter.
///
/// For CSS the query's `h × w` is the full query window and keys are pooled
/// to `(h/ρ) × (w/ρ)`, so `ρ` must divide `h` and `w`.
pub fn verify_macs(q: &ComplexityQuery) -> Result<MacVerification> {
    if !q.kind.is_executable() {
        return Err(Error::Config(format!("{} is analytic only", q.kind)));
    }
    let analytic = analytic_macs(q)?;
    let (h, w) = (q.h.unwrap_or(0), q.w.unwrap_or(0));
    divides("verify_macs", h, q.height, "window height")?;
    divides("verify_macs", w, q.width, "window width")?;
    let mut cfg = AttentionConfig::new(q.d, 1, 1, 1);
    match q.kind {
        MsaKind::Css => {
            let rho = q.rho.unwrap_or(0);
            divides("verify_macs", rho, h, "ρ")?;
            divides("verify_macs", rho, w, "ρ")?;
            cfg.window_h = h / rho;
            cfg.window_w = w / rho;
            cfg.rho = rho;
        }
        _ => {
            cfg.window_h = h;
            cfg.window_w = w;
        }
    }
    if q.kind == MsaKind::W3d {
        let t = q.t.unwrap_or(0);
        divides("verify_macs", t, q.frames, "temporal window")?;
        cfg.window_t = t;
    }
    let mut init = Init::new(0x3AC5);
    let layers = if q.kind == MsaKind::Fw { 2 } else { 1 };
    let params: Vec<AttentionParams> = (0..layers).map(|_| AttentionParams::init(&mut init, &cfg, false)).collect();
    let mut rng = Philox::new(0x3AC5);
    let x = Tensor::from_fn(&[q.frames, q.height, q.width, q.d], |_| rng.uniform())?;

    let mut g = Graph::new();
    let xv = g.constant(x);
    match q.kind {
        MsaKind::Css => css_msa(&mut g, xv, &cfg, &params[0])?,
        MsaKind::W3d => baseline_msa(&mut g, BaselineKind::W3d, xv, &cfg, &params)?,
        MsaKind::Sw => baseline_msa(&mut g, BaselineKind::Sw, xv, &cfg, &params)?,
        MsaKind::Fw => baseline_msa(&mut g, BaselineKind::Fw, xv, &cfg, &params)?,
        MsaKind::G | MsaKind::F => unreachable!(),
    };
    Ok(MacVerification {
        analytic,
        instrumented: g.macs().total(),
        params: params.iter().map(|p| p.param_count()).sum(),
    })
}

/// Parameter count of the model a configuration describes.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    NetParams::closed_form_count(cfg)
}
