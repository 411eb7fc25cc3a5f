use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(op, "inputs must have equal shapes", a.dims(), b.dims()));
    }
    Ok(())
}

/// `10·log₁₀(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_dims("psnr", a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(peak * peak / mse)).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - c;
        *t = libm::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian filter over the valid region of an `h × w` image.
fn filter(img: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * img[y * w + x + k]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM of two `H × W` images (11 × 11 Gaussian, σ = 1.5,
/// K₁ = 0.01, K₂ = 0.03, peak 1), averaged over the valid region.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims("ssim", a, b)?;
    let &[h, w] = a.dims() else {
        return Err(Error::dim("ssim", "expected an H × W image", a.dims(), &[]));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim("ssim", "image smaller than the 11 × 11 window", a.dims(), &[SSIM_WINDOW]));
    }
    let taps = gaussian_taps();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, my) = (filter(x, h, w, &taps), filter(y, h, w, &taps));
    let (sxx, syy, sxy) = (filter(&xx, h, w, &taps), filter(&yy, h, w, &taps), filter(&xy, h, w, &taps));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ma, mb) = (mx[i], my[i]);
        let va = sxx[i] - ma * ma;
        let vb = syy[i] - mb * mb;
        let cov = sxy[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Per-frame and mean PSNR/SSIM of a video against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_frame: Vec<(f64, f64)>,
}

fn as_frames(v: &Tensor) -> Result<Tensor> {
    match *v.dims() {
        [_, _, _] => Ok(v.clone()),
        [t, h, w, 1] => v.reshape(&[t, h, w]),
        _ => Err(Error::dim("fidelity", "expected T × H × W (× 1)", v.dims(), &[])),
    }
}

/// Frame-averaged PSNR with peak 1; unlike [`fidelity`] it accepts frames
/// smaller than the SSIM window.
pub fn video_psnr(prediction: &Tensor, truth: &Tensor) -> Result<f64> {
    let (p, t) = (as_frames(prediction)?, as_frames(truth)?);
    same_dims("video_psnr", &p, &t)?;
    let frames = p.dims()[0];
    let mut total = 0.0;
    for f in 0..frames {
        total += psnr(&p.frame(f), &t.frame(f), 1.0)?;
    }
    Ok(total / frames as f64)
}

/// Frame-averaged PSNR (peak 1) and SSIM.
pub fn fidelity(prediction: &Tensor, truth: &Tensor) -> Result<FidelityReport> {
    let (p, t) = (as_frames(prediction)?, as_frames(truth)?);
    same_dims("fidelity", &p, &t)?;
    let (frames, h, w) = (p.dims()[0], p.dims()[1], p.dims()[2]);
    let mut per_frame = Vec::with_capacity(frames);
    for f in 0..frames {
        let a = p.frame(f).reshape(&[h, w])?;
        let b = t.frame(f).reshape(&[h, w])?;
        per_frame.push((psnr(&a, &b, 1.0)?, ssim(&a, &b)?));
    }
    let n = frames as f64;
    Ok(FidelityReport {
        psnr_db: per_frame.iter().map(|r| r.0).sum::<f64>() / n,
        ssim: per_frame.iter().map(|r| r.1).sum::<f64>() / n,
        per_frame,
    })
}
