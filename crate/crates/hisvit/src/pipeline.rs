//! The operations behind each CLI subcommand, free of argument parsing.

use std::path::Path;
use std::thread;

use hisvit_core::analysis::{analytic_macs, verify_macs, ComplexityQuery, MsaKind};
use hisvit_core::attention::{joint_attention_oracle, AttentionConfig, AttentionParams};
use hisvit_core::layers::Init;
use hisvit_core::optics::{forward_measure, generate_mask, initialize_estimate, MaskCube, Measurement};
use hisvit_core::rng::Philox;
use hisvit_core::scene::{make_synthetic_video, SyntheticSceneSpec};
use hisvit_core::train::{evaluate_one, SceneEvaluation};
use hisvit_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::error::{HarnessError, Result};
use crate::vstc::{self, Dtype};

/// Environment variable holding the worker thread count.
pub const THREADS_VAR: &str = "HISVIT_THREADS";

/// Thread count from [`THREADS_VAR`], 1 when unset.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(HarnessError::Config(format!("{THREADS_VAR} must be a positive integer, got `{s}`"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSpec {
    pub scene: SyntheticSceneSpec,
    pub mask_seed: u64,
    pub mask_density: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub video: Tensor,
    pub mask: MaskCube,
    pub measurement: Measurement,
    pub normalized: Tensor,
    pub degraded: Tensor,
}

pub fn simulate(spec: &SimulateSpec) -> Result<Simulation> {
    let s = &spec.scene;
    let video = make_synthetic_video(s)?;
    let mask = generate_mask(s.frames, s.height, s.width, spec.mask_seed, spec.mask_density)?;
    let measurement = forward_measure(&video, &mask, spec.noise_sigma, spec.noise_seed)?;
    let est = initialize_estimate(&measurement, &mask)?;
    Ok(Simulation {
        video,
        mask,
        measurement,
        normalized: est.normalized_image,
        degraded: est.degraded_video,
    })
}

/// File names written by [`Simulation::save`].
pub const SIMULATION_FILES: [&str; 5] = ["video.vstc", "mask.vstc", "measurement.vstc", "normalized.vstc", "degraded.vstc"];

impl Simulation {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let [video, mask, meas, norm, degraded] = SIMULATION_FILES;
        vstc::save(dir.join(video), &self.video, Dtype::F64)?;
        vstc::save(dir.join(mask), self.mask.values(), Dtype::U8)?;
        vstc::save(dir.join(meas), &self.measurement.image, Dtype::F64)?;
        vstc::save(dir.join(norm), &self.normalized, Dtype::F64)?;
        vstc::save(dir.join(degraded), &self.degraded, Dtype::F64)?;
        Ok(())
    }
}

/// Scores `videos` with the checkpoint's model and mask, spread over `threads`
/// workers. Scene `i` uses noise seed `i`, so results do not depend on `threads`.
pub fn evaluate_scenes(ckpt: &Checkpoint, videos: &[(String, Tensor)], threads: usize) -> Result<Vec<SceneEvaluation>> {
    let cfg = &ckpt.config;
    let mask = cfg.mask()?;
    let run = |i: usize| {
        let (name, video) = &videos[i];
        evaluate_one(&cfg.model, &ckpt.params, &mask, name, video, cfg.noise_sigma, i as u64)
    };
    let threads = threads.clamp(1, videos.len().max(1));
    if threads == 1 {
        return (0..videos.len()).map(run).map(|r| r.map_err(Into::into)).collect();
    }
    let mut slots: Vec<Option<hisvit_core::Result<SceneEvaluation>>> = (0..videos.len()).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|k| {
                let run = &run;
                s.spawn(move || (k..videos.len()).step_by(threads).map(|i| (i, run(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every scene evaluated").map_err(Into::into)).collect()
}

/// Held-out synthetic scenes of a checkpoint's configuration.
pub fn held_out_videos(ckpt: &Checkpoint, count: usize) -> Result<Vec<(String, Tensor)>> {
    ckpt.config
        .held_out_scenes(count)
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok((format!("heldout-{i}-{}", spec.motif), make_synthetic_video(spec)?)))
        .collect()
}

/// Geometry `(T, H, W, d, window, ρ)` of the default complexity sweep.
pub const MACS_SWEEP: [(usize, usize, usize, usize, usize, usize); 10] = [
    (2, 4, 4, 3, 2, 2),
    (2, 8, 8, 4, 4, 2),
    (4, 8, 8, 2, 4, 4),
    (3, 6, 6, 5, 3, 1),
    (4, 4, 8, 3, 4, 2),
    (1, 8, 8, 4, 8, 2),
    (2, 12, 12, 2, 6, 3),
    (4, 8, 4, 6, 2, 1),
    (2, 16, 16, 2, 4, 4),
    (6, 4, 4, 1, 2, 2),
];

/// The query a sweep entry describes for `kind`. 3D windows span two frames
/// when `T` is even and one otherwise.
pub fn sweep_query(kind: MsaKind, entry: (usize, usize, usize, usize, usize, usize)) -> ComplexityQuery {
    let (t, h, w, d, win, rho) = entry;
    let q = ComplexityQuery::new(kind, t, h, w, d).window(win, win);
    match kind {
        MsaKind::Css => q.pooling(rho),
        MsaKind::W3d => q.temporal_window(if t % 2 == 0 { 2 } else { 1 }),
        _ => q,
    }
}

/// Analytic count plus, for executable kinds, the instrumented count.
pub fn macs_row(q: &ComplexityQuery) -> Result<crate::report::MacsRow> {
    let analytic = analytic_macs(q)?;
    if q.kind.is_executable() {
        let v = verify_macs(q)?;
        Ok(crate::report::MacsRow::new(q, analytic, Some(v.instrumented), Some(v.params)))
    } else {
        Ok(crate::report::MacsRow::new(q, analytic, None, None))
    }
}

pub fn macs_sweep(kinds: &[MsaKind]) -> Result<Vec<crate::report::MacsRow>> {
    let mut rows = Vec::new();
    for &entry in &MACS_SWEEP {
        for &kind in kinds {
            rows.push(macs_row(&sweep_query(kind, entry))?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnMapSpec {
    pub frames: usize,
    pub d: usize,
    pub heads: usize,
    pub window: usize,
    pub rho: usize,
    pub head: usize,
    pub seed: u64,
}

/// Joint `(T·P) × (T·Q)` attention matrix of one window of a randomly
/// initialized layer on a random single-window input.
pub fn attention_map(spec: &AttnMapSpec) -> Result<Tensor> {
    let cfg = AttentionConfig::new(spec.d, spec.heads, spec.window, spec.rho);
    cfg.validate()?;
    if spec.head >= spec.heads {
        return Err(HarnessError::Config(format!("head {} out of range for {} heads", spec.head, spec.heads)));
    }
    let side = spec.window * spec.rho;
    let params = AttentionParams::init(&mut Init::new(spec.seed), &cfg, true);
    let mut rng = Philox::with_stream(spec.seed, 1);
    let x = Tensor::from_fn(&[spec.frames, side, side, spec.d], |_| rng.uniform() * 2.0 - 1.0)?;
    let out = joint_attention_oracle(&x, &cfg, &params)?;
    Ok(out.windows[spec.head].as_tensor())
}
