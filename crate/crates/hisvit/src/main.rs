use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hisvit::checkpoint::Checkpoint;
use hisvit::config::parse_train_config;
use hisvit::error::{HarnessError, Result};
use hisvit::pipeline::{
    attention_map, evaluate_scenes, held_out_videos, macs_row, macs_sweep, simulate, thread_count, AttnMapSpec,
    SimulateSpec,
};
use hisvit::report::{write_rows, EvalRow, TrainLogRow};
use hisvit::selftest;
use hisvit::vstc::{self, Dtype};
use hisvit_core::analysis::{ComplexityQuery, MsaKind};
use hisvit_core::scene::{Motif, SyntheticSceneSpec};
use hisvit_core::train::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "hisvit", version, about = "Video snapshot compressive imaging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene, measure it and write the VSTC tensors.
    Simulate {
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        /// moving_square, moving_stripes or static; omitted draws a random moving scene.
        #[arg(long)]
        motif: Option<Motif>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        mask_seed: u64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train from a config file (or the toy defaults) and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Override the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out synthetic scenes or VSTC videos.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of held-out synthetic scenes, used when no video is given.
        #[arg(long, default_value_t = 5)]
        scenes: usize,
        /// `T × H × W` ground-truth videos.
        #[arg(long = "video")]
        videos: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic and instrumented MAC counts as CSV.
    Macs {
        /// Single query kind; omitted runs the built-in sweep over every kind.
        #[arg(long)]
        kind: Option<MsaKind>,
        #[arg(long, requires = "kind")]
        frames: Option<usize>,
        #[arg(long, requires = "kind")]
        height: Option<usize>,
        #[arg(long, requires = "kind")]
        width: Option<usize>,
        #[arg(long, requires = "kind")]
        d: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        rho: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Skip the toy training run (the slow criterion).
        #[arg(long)]
        skip_training: bool,
        /// Run only these criteria.
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Write the joint attention matrix of one window as VSTC.
    Attnmap {
        #[arg(long, default_value_t = 2)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long, default_value_t = 2)]
        rho: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            frames,
            height,
            width,
            motif,
            seed,
            mask_seed,
            density,
            noise_sigma,
            noise_seed,
            out_dir,
        } => {
            let scene = match motif {
                Some(m) => SyntheticSceneSpec::new(frames, height, width, m, seed),
                None => SyntheticSceneSpec::sample(frames, height, width, seed),
            };
            let sim = simulate(&SimulateSpec {
                scene,
                mask_seed,
                mask_density: density,
                noise_sigma,
                noise_seed,
            })?;
            sim.save(&out_dir)?;
            eprintln!("wrote {} ({} scene, mask {:#018x})", out_dir.display(), scene.motif, sim.mask.id());
        }
        Command::Train {
            config,
            resume,
            steps,
            out,
            log,
        } => {
            let mut trainer = match resume {
                Some(path) => Checkpoint::load(path)?.into_trainer()?,
                None => {
                    let cfg = match config {
                        Some(path) => parse_train_config(&std::fs::read_to_string(path)?)?,
                        None => TrainConfig::toy(),
                    };
                    Trainer::new(cfg)?
                }
            };
            if let Some(n) = steps {
                trainer.config.steps = n;
            }
            let result = trainer.run(|l| {
                if let Some(p) = l.psnr {
                    eprintln!("step {:>5}  loss {:.6}  psnr {:.2} dB", l.step, l.loss, p);
                }
            });
            // the checkpoint is written even when training stops on a numeric failure
            Checkpoint::from_trainer(&trainer).save(&out)?;
            if let Some(path) = log {
                let rows: Vec<TrainLogRow> = trainer.history.iter().map(Into::into).collect();
                write_rows(BufWriter::new(File::create(path)?), &rows)?;
            }
            result?;
        }
        Command::Eval {
            checkpoint,
            scenes,
            videos,
            out,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let inputs = if videos.is_empty() {
                held_out_videos(&ckpt, scenes)?
            } else {
                videos
                    .iter()
                    .map(|p| Ok((p.display().to_string(), vstc::load(p)?)))
                    .collect::<Result<Vec<_>>>()?
            };
            let evals = evaluate_scenes(&ckpt, &inputs, thread_count()?)?;
            let rows: Vec<EvalRow> = evals.iter().map(Into::into).collect();
            write_rows(output(&out)?, &rows)?;
        }
        Command::Macs {
            kind,
            frames,
            height,
            width,
            d,
            t,
            h,
            w,
            rho,
            out,
        } => {
            let rows = match kind {
                None => macs_sweep(&MsaKind::ALL)?,
                Some(kind) => {
                    let need = |v: Option<usize>, name: &str| {
                        v.ok_or_else(|| HarnessError::Config(format!("--{name} is required with --kind")))
                    };
                    let mut q = ComplexityQuery::new(
                        kind,
                        need(frames, "frames")?,
                        need(height, "height")?,
                        need(width, "width")?,
                        need(d, "d")?,
                    );
                    q.t = t;
                    q.h = h;
                    q.w = w;
                    q.rho = rho;
                    vec![macs_row(&q)?]
                }
            };
            write_rows(output(&out)?, &rows)?;
        }
        Command::Selftest { skip_training, only } => {
            let ids: Vec<u8> = if only.is_empty() { (1..=10).collect() } else { only };
            let train = TrainConfig::toy();
            let mut all = true;
            for id in ids {
                if id == 8 && skip_training {
                    println!("criterion  8 SKIP {}", selftest::TITLES[7]);
                    continue;
                }
                let r = selftest::run(id, &train);
                println!("{}", r.line());
                all &= r.passed;
            }
            return Ok(all);
        }
        Command::Attnmap {
            frames,
            d,
            heads,
            window,
            rho,
            head,
            seed,
            out,
        } => {
            let map = attention_map(&AttnMapSpec {
                frames,
                d,
                heads,
                window,
                rho,
                head,
                seed,
            })?;
            vstc::save(&out, &map, Dtype::F64)?;
            eprintln!("wrote {} ({} × {})", out.display(), map.dims()[0], map.dims()[1]);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
