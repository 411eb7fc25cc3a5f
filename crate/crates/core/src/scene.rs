//! Synthetic video scenes with exact toroidal motion.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    MovingSquare,
    MovingStripes,
    Static,
}

impl FromStr for Motif {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving_square" => Ok(Motif::MovingSquare),
            "moving_stripes" => Ok(Motif::MovingStripes),
            "static" => Ok(Motif::Static),
            other => Err(Error::Config(format!("unknown motif `{other}`"))),
        }
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motif::MovingSquare => "moving_square",
            Motif::MovingStripes => "moving_stripes",
            Motif::Static => "static",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motif: Motif,
    /// Pixels per frame along (y, x); ignored for static scenes.
    pub velocity: (i64, i64),
    pub background: f64,
    pub foreground: f64,
    /// Square side, or stripe period for stripes.
    pub size: usize,
    /// Seeds the placement of the motif and the static texture.
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn new(frames: usize, height: usize, width: usize, motif: Motif, seed: u64) -> Self {
        SyntheticSceneSpec {
            frames,
            height,
            width,
            motif,
            velocity: (1, 1),
            background: 0.2,
            foreground: 0.8,
            size: (height.min(width) / 3).max(1),
            seed,
        }
    }

    /// Draws a moving scene (square or stripes) with random levels and velocity.
    pub fn sample(frames: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = Philox::with_stream(seed, 2);
        let motif = if rng.below(2) == 0 {
            Motif::MovingSquare
        } else {
            Motif::MovingStripes
        };
        let velocity = loop {
            let v = (rng.below(5) as i64 - 2, rng.below(5) as i64 - 2);
            if v != (0, 0) {
                break v;
            }
        };
        let a = 0.1 + 0.3 * rng.uniform();
        let b = 0.6 + 0.3 * rng.uniform();
        let (background, foreground) = if rng.below(2) == 0 { (a, b) } else { (b, a) };
        let side = height.min(width);
        let size = match motif {
            Motif::MovingStripes => 4 + rng.below((side / 4).max(1) as u64) as usize,
            _ => side / 4 + rng.below((side / 4).max(1) as u64) as usize,
        };
        SyntheticSceneSpec {
            frames,
            height,
            width,
            motif,
            velocity,
            background,
            foreground,
            size: size.max(1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.size == 0 {
            return Err(Error::Config("scene extents and motif size must be positive".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.background) || !unit(self.foreground) {
            return Err(Error::Config("intensity levels must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn first_frame(spec: &SyntheticSceneSpec) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = Philox::with_stream(spec.seed, 3);
    let y0 = rng.below(h as u64) as usize;
    let x0 = rng.below(w as u64) as usize;
    let mut img = alloc::vec![spec.background; h * w];
    match spec.motif {
        Motif::MovingSquare => {
            for dy in 0..spec.size.min(h) {
                for dx in 0..spec.size.min(w) {
                    img[((y0 + dy) % h) * w + (x0 + dx) % w] = spec.foreground;
                }
            }
        }
        Motif::MovingStripes => {
            let period = spec.size.max(2);
            // stripes run across the dominant motion so they never look static
            let vertical = spec.velocity.1.abs() >= spec.velocity.0.abs();
            for y in 0..h {
                for x in 0..w {
                    let c = if vertical { x + x0 } else { y + y0 };
                    if c % period < period / 2 {
                        img[y * w + x] = spec.foreground;
                    }
                }
            }
        }
        Motif::Static => {
            // blocky texture between the two levels
            let block = spec.size.max(1);
            let (by, bx) = (h.div_ceil(block), w.div_ceil(block));
            let cells: Vec<f64> = (0..by * bx)
                .map(|_| spec.background + (spec.foreground - spec.background) * rng.uniform())
                .collect();
            for y in 0..h {
                for x in 0..w {
                    img[y * w + x] = cells[(y / block) * bx + x / block];
                }
            }
        }
    }
    img
}

/// Renders `T × H × W`; frame `t` is frame 0 cyclically shifted by `t·velocity`.
pub fn make_synthetic_video(spec: &SyntheticSceneSpec) -> Result<Tensor> {
    spec.validate()?;
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let base = first_frame(spec);
    let (vy, vx) = match spec.motif {
        Motif::Static => (0, 0),
        _ => spec.velocity,
    };
    let mut data = Vec::with_capacity(t * h * w);
    for f in 0..t as i64 {
        let sy = (f * vy).rem_euclid(h as i64) as usize;
        let sx = (f * vx).rem_euclid(w as i64) as usize;
        for y in 0..h {
            for x in 0..w {
                data.push(base[((y + h - sy) % h) * w + (x + w - sx) % w]);
            }
        }
    }
    Tensor::new(&[t, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_frames_identical() {
        let v = make_synthetic_video(&SyntheticSceneSpec::new(4, 8, 8, Motif::Static, 3)).unwrap();
        for t in 1..4 {
            assert_eq!(v.frame(t).data(), v.frame(0).data());
        }
    }

    #[test]
    fn frames_shift_by_velocity() {
        let mut spec = SyntheticSceneSpec::new(3, 8, 10, Motif::MovingSquare, 1);
        spec.velocity = (2, -1);
        let v = make_synthetic_video(&spec).unwrap();
        for t in 0..2 {
            for y in 0..8 {
                for x in 0..10 {
                    let next = v.at(&[t + 1, (y + 2) % 8, (x + 9) % 10]);
                    assert_eq!(next, v.at(&[t, y, x]));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_synthetic_video(&SyntheticSceneSpec::sample(8, 16, 16, 5)).unwrap();
        let b = make_synthetic_video(&SyntheticSceneSpec::sample(8, 16, 16, 5)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
