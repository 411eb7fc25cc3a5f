//! INI configuration files.
//!
//! ```ini
//! [model]
//! block_count = 2
//! branches = 1:4, 2:4, 4:8
//! [train]
//! steps = 2000
//! [adam]
//! lr = 0.001
//! ```
//!
//! Absent keys keep the toy defaults; unknown sections and keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use hisvit_core::net::BranchSpec;
use hisvit_core::train::TrainConfig;
use ini::Ini;

use crate::error::{HarnessError, Result};

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

fn parse_branches(value: &str) -> Result<Vec<BranchSpec>> {
    value
        .split(',')
        .map(|item| {
            let (rho, channels) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| HarnessError::Config(format!("branch `{item}` is not rho:channels")))?;
            Ok(BranchSpec {
                rho: parse("model", "branches", rho)?,
                channels: parse("model", "branches", channels)?,
            })
        })
        .collect()
}

/// Parses a training configuration, starting from [`TrainConfig::toy`].
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut cfg = TrainConfig::toy();
    let mut seen = BTreeSet::new();
    for (section, props) in ini.iter() {
        let Some(section) = section else {
            if let Some((k, _)) = props.iter().next() {
                return Err(HarnessError::Config(format!("key `{k}` outside any section")));
            }
            continue;
        };
        for (key, value) in props.iter() {
            if !seen.insert((section.to_string(), key.to_string())) {
                return Err(HarnessError::Config(format!("[{section}] {key} given twice")));
            }
            let m = &mut cfg.model;
            let a = &mut cfg.adam;
            let p = |v: &str| -> Result<usize> { parse(section, key, v) };
            let f = |v: &str| -> Result<f64> { parse(section, key, v) };
            match (section, key) {
                ("model", "block_count") => m.block_count = p(value)?,
                ("model", "branches") => m.branches = parse_branches(value)?,
                ("model", "extractor_channels") => m.extractor_channels = p(value)?,
                ("model", "extractor_depth") => m.extractor_depth = p(value)?,
                ("model", "window") => m.window = p(value)?,
                ("model", "heads") => m.heads = p(value)?,
                ("model", "lambda") => m.lambda = p(value)?,
                ("model", "output_channels") => m.output_channels = p(value)?,
                ("train", "steps") => cfg.steps = p(value)?,
                ("train", "batch") => cfg.batch = p(value)?,
                ("train", "seed") => cfg.seed = parse(section, key, value)?,
                ("train", "noise_sigma") => cfg.noise_sigma = f(value)?,
                ("train", "frames") => cfg.frames = p(value)?,
                ("train", "height") => cfg.height = p(value)?,
                ("train", "width") => cfg.width = p(value)?,
                ("train", "mask_seed") => cfg.mask_seed = parse(section, key, value)?,
                ("train", "mask_density") => cfg.mask_density = f(value)?,
                ("train", "eval_interval") => cfg.eval_interval = p(value)?,
                ("adam", "lr") => a.lr = f(value)?,
                ("adam", "beta1") => a.beta1 = f(value)?,
                ("adam", "beta2") => a.beta2 = f(value)?,
                ("adam", "epsilon") => a.epsilon = f(value)?,
                ("model" | "train" | "adam", _) => {
                    return Err(HarnessError::Config(format!("unknown key `{key}` in [{section}]")))
                }
                _ => return Err(HarnessError::Config(format!("unknown section [{section}]"))),
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes every field; floats use the shortest round-tripping form.
pub fn format_train_config(cfg: &TrainConfig) -> String {
    let m = &cfg.model;
    let branches: Vec<String> = m.branches.iter().map(|b| format!("{}:{}", b.rho, b.channels)).collect();
    let mut s = String::new();
    let _ = write!(
        s,
        "[model]\nblock_count = {}\nbranches = {}\nextractor_channels = {}\nextractor_depth = {}\n\
         window = {}\nheads = {}\nlambda = {}\noutput_channels = {}\n\n",
        m.block_count,
        branches.join(", "),
        m.extractor_channels,
        m.extractor_depth,
        m.window,
        m.heads,
        m.lambda,
        m.output_channels
    );
    let _ = write!(
        s,
        "[train]\nsteps = {}\nbatch = {}\nseed = {}\nnoise_sigma = {:?}\nframes = {}\nheight = {}\nwidth = {}\n\
         mask_seed = {}\nmask_density = {:?}\neval_interval = {}\n\n",
        cfg.steps,
        cfg.batch,
        cfg.seed,
        cfg.noise_sigma,
        cfg.frames,
        cfg.height,
        cfg.width,
        cfg.mask_seed,
        cfg.mask_density,
        cfg.eval_interval
    );
    let a = &cfg.adam;
    let _ = write!(
        s,
        "[adam]\nlr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nepsilon = {:?}\n",
        a.lr, a.beta1, a.beta2, a.epsilon
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig::toy();
        cfg.adam.lr = 0.1 + 0.2;
        cfg.noise_sigma = 1.0 / 3.0;
        assert_eq!(parse_train_config(&format_train_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_train_config("[train]\nstep = 3\n").is_err());
        assert!(parse_train_config("[optimizer]\nlr = 3\n").is_err());
        assert!(parse_train_config("steps = 3\n").is_err());
        assert!(parse_train_config("[train]\nsteps = 3\nsteps = 4\n").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = parse_train_config("[train]\nsteps = 5\n[model]\nbranches = 1:4, 2:4\n").unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.model.branches.len(), 2);
        assert_eq!(cfg.adam, TrainConfig::toy().adam);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_train_config("[adam]\nbeta1 = 1.5\n").is_err());
        assert!(parse_train_config("[train]\nbatch = many\n").is_err());
    }
}
