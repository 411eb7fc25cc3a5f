//! Seeded training and evaluation on synthetic scenes.
//!
//! Every step draws fresh scenes, measures them through one fixed mask,
//! back-projects, reconstructs and takes an Adam step on the MSE. The run is a
//! pure function of the configuration.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::analysis::{fidelity, video_psnr, FidelityReport};
use crate::error::{Error, Result};
use crate::net::{reconstruct, reconstruct_video, ModelConfig, NetParams};
use crate::optics::{forward_measure, generate_mask, initialize_estimate, MaskCube};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Philox;
use crate::scene::{make_synthetic_video, SyntheticSceneSpec};
use crate::tape::Graph;
use crate::tensor::Tensor;

/// Philox streams separating the seeded draws of one run.
const STREAM_TRAIN_SCENES: u64 = 10;
const STREAM_EVAL_SCENES: u64 = 11;
const STREAM_NOISE: u64 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// The single mask used for training and evaluation.
    pub mask_seed: u64,
    pub mask_density: f64,
    /// Steps between logged PSNR values; 0 disables them.
    pub eval_interval: usize,
}

impl TrainConfig {
    /// Desk-scale run on `8 × 32 × 32` scenes.
    pub fn toy() -> Self {
        TrainConfig {
            model: ModelConfig::toy(),
            adam: AdamConfig::default(),
            steps: 2000,
            batch: 2,
            seed: 7,
            noise_sigma: 0.0,
            frames: 8,
            height: 32,
            width: 32,
            mask_seed: 1,
            mask_density: 0.5,
            eval_interval: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adam.validate()?;
        self.model.validate_frame(self.height, self.width)?;
        if self.batch == 0 || self.frames == 0 {
            return Err(Error::Config("batch and frames must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn mask(&self) -> Result<MaskCube> {
        generate_mask(self.frames, self.height, self.width, self.mask_seed, self.mask_density)
    }

    fn scene_seed(&self, step: usize, item: usize) -> u64 {
        let mut rng = Philox::with_stream(self.seed, STREAM_TRAIN_SCENES);
        // skip ahead deterministically: one draw per (step, item)
        let index = (step * self.batch + item) as u64;
        rng.seek(index);
        rng.next_u64()
    }

    fn noise_seed(&self, step: usize, item: usize) -> u64 {
        let mut rng = Philox::with_stream(self.seed, STREAM_NOISE);
        rng.seek((step * self.batch + item) as u64);
        rng.next_u64()
    }

    /// Held-out evaluation scenes, disjoint from the training draws.
    pub fn held_out_scenes(&self, count: usize) -> Vec<SyntheticSceneSpec> {
        let mut rng = Philox::with_stream(self.seed, STREAM_EVAL_SCENES);
        (0..count)
            .map(|_| SyntheticSceneSpec::sample(self.frames, self.height, self.width, rng.next_u64()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Training-batch PSNR, present every `eval_interval` steps.
    pub psnr: Option<f64>,
}

/// One training sample: ground truth and the network input derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub truth: Tensor,
    /// `T × H × W × 1` mask-stamped back-projection.
    pub input: Tensor,
    /// `Ī` repeated over frames, the trivial estimate.
    pub baseline: Tensor,
}

/// Measures `video` through `mask` and back-projects it.
pub fn make_sample(video: &Tensor, mask: &MaskCube, noise_sigma: f64, noise_seed: u64) -> Result<Sample> {
    let meas = forward_measure(video, mask, noise_sigma, noise_seed)?;
    let est = initialize_estimate(&meas, mask)?;
    let [t, h, w] = [mask.frames(), mask.height(), mask.width()];
    Ok(Sample {
        truth: video.reshape(&[t, h, w])?,
        input: est.degraded_video.reshape(&[t, h, w, 1])?,
        baseline: est.broadcast(t),
    })
}

pub struct Trainer {
    pub config: TrainConfig,
    pub params: NetParams,
    pub adam: Adam,
    pub history: Vec<StepLog>,
    mask: MaskCube,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = NetParams::init(&config.model, config.seed)?;
        let adam = Adam::new(config.adam)?;
        Trainer::resume(config, params, adam, Vec::new())
    }

    /// Continues from saved parameters and optimizer state.
    pub fn resume(config: TrainConfig, params: NetParams, adam: Adam, history: Vec<StepLog>) -> Result<Self> {
        config.validate()?;
        let mask = config.mask()?;
        Ok(Trainer {
            config,
            params,
            adam,
            history,
            mask,
        })
    }

    pub fn mask(&self) -> &MaskCube {
        &self.mask
    }

    pub fn steps_done(&self) -> usize {
        self.adam.step as usize
    }

    pub fn sample(&self, step: usize, item: usize) -> Result<Sample> {
        let c = &self.config;
        let spec = SyntheticSceneSpec::sample(c.frames, c.height, c.width, c.scene_seed(step, item));
        let video = make_synthetic_video(&spec)?;
        make_sample(&video, &self.mask, c.noise_sigma, c.noise_seed(step, item))
    }

    /// One optimizer step; returns the batch loss measured before the update.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.steps_done();
        let batch = self.config.batch;
        let samples: Vec<Sample> = (0..batch).map(|i| self.sample(step, i)).collect::<Result<_>>()?;
        let mut g = Graph::new();
        let mut loss = None;
        let mut outputs = Vec::with_capacity(batch);
        for s in &samples {
            let x = g.constant(s.input.clone());
            let y = reconstruct(&mut g, x, &self.config.model, &self.params)?;
            let [t, h, w] = [s.truth.dims()[0], s.truth.dims()[1], s.truth.dims()[2]];
            let truth = g.constant(s.truth.reshape(&[t, h, w, 1])?);
            let l = g.mse(y, truth)?;
            outputs.push(y);
            loss = Some(match loss {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let loss = g.mul_const(loss.expect("batch ≥ 1"), 1.0 / batch as f64);
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} at step {step}")));
        }
        let grads = g.backward(loss)?.into_param_map(&g);
        if let Some((id, _)) = grads.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for parameter {} at step {step}", id.0)));
        }
        let psnr = if self.config.eval_interval > 0 && step.is_multiple_of(self.config.eval_interval) {
            let mut total = 0.0;
            for (s, &y) in samples.iter().zip(&outputs) {
                total += video_psnr(g.value(y), &s.truth)?;
            }
            Some(total / batch as f64)
        } else {
            None
        };
        self.adam.update(&mut self.params, &grads)?;
        let log = StepLog { step, loss: value, psnr };
        self.history.push(log);
        Ok(log)
    }

    /// Runs until `config.steps` optimizer steps have been taken.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        while self.steps_done() < self.config.steps {
            let log = self.step()?;
            on_step(&log);
        }
        Ok(())
    }
}

/// Fidelity of the network and of the `Ī`-broadcast estimate on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEvaluation {
    pub name: String,
    pub model: FidelityReport,
    pub baseline: FidelityReport,
}

impl SceneEvaluation {
    pub fn margin_db(&self) -> f64 {
        self.model.psnr_db - self.baseline.psnr_db
    }
}

/// Reconstructs each video through `mask` and scores it against ground truth.
pub fn evaluate(
    model: &ModelConfig,
    params: &NetParams,
    mask: &MaskCube,
    videos: &[(String, Tensor)],
    noise_sigma: f64,
) -> Result<Vec<SceneEvaluation>> {
    videos
        .iter()
        .enumerate()
        .map(|(i, (name, video))| evaluate_one(model, params, mask, name, video, noise_sigma, i as u64))
        .collect()
}

/// Scores one scene; `noise_seed` only matters when `noise_sigma > 0`.
pub fn evaluate_one(
    model: &ModelConfig,
    params: &NetParams,
    mask: &MaskCube,
    name: &str,
    video: &Tensor,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<SceneEvaluation> {
    let s = make_sample(video, mask, noise_sigma, noise_seed)?;
    let out = reconstruct_video(&s.input, model, params)?;
    Ok(SceneEvaluation {
        name: String::from(name),
        model: fidelity(&out, &s.truth)?,
        baseline: fidelity(&s.baseline, &s.truth)?,
    })
}
