//! Snapshot acquisition: binary modulation masks, temporal integration into a
//! single coded image, and the pseudoinverse back-projection that turns the
//! snapshot into the network's `T × H × W` input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tensor::Tensor;

/// Binary `T × H × W` modulation cube.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCube {
    values: Tensor,
    temporal_sum: Vec<u32>,
    id: u64,
}

fn fnv1a(dims: &[usize], bits: impl Iterator<Item = bool>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for &d in dims {
        for b in (d as u64).to_le_bytes() {
            eat(b);
        }
    }
    for bit in bits {
        eat(bit as u8);
    }
    h
}

impl MaskCube {
    /// Validates a `T × H × W` tensor of zeros and ones.
    pub fn from_values(values: Tensor) -> Result<Self> {
        let &[t, h, w] = values.dims() else {
            return Err(Error::dim("mask", "mask must be T × H × W", values.dims(), &[]));
        };
        if let Some(i) = values.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parameter(format!("mask entry {i} is not binary")));
        }
        let mut temporal_sum = vec![0u32; h * w];
        for ti in 0..t {
            for (s, &v) in temporal_sum.iter_mut().zip(&values.data()[ti * h * w..(ti + 1) * h * w]) {
                *s += v as u32;
            }
        }
        let id = fnv1a(values.dims(), values.data().iter().map(|&v| v == 1.0));
        Ok(MaskCube { values, temporal_sum, id })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[2]
    }

    /// Content hash; measurements carry it to tie them to their mask.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// `Σ_t M(t, y, x)` in row-major `H × W` order.
    pub fn temporal_sum(&self) -> &[u32] {
        &self.temporal_sum
    }

    /// Pixels `(y, x)` that no frame samples.
    pub fn zero_coverage(&self) -> Vec<(usize, usize)> {
        let w = self.width();
        self.temporal_sum
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }
}

/// I.i.d. Bernoulli(`p`) mask drawn from Philox stream 0 of `seed`, one
/// uniform per entry in `T, H, W` row-major order, entry is 1 iff `u < p`.
pub fn generate_mask(t: usize, h: usize, w: usize, seed: u64, p: f64) -> Result<MaskCube> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("mask probability must lie in (0, 1), got {p}")));
    }
    let mut rng = Philox::new(seed);
    let values = Tensor::from_fn(&[t, h, w], |_| if rng.uniform() < p { 1.0 } else { 0.0 })?;
    MaskCube::from_values(values)
}

/// A single coded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub image: Tensor,
    pub noise_sigma: f64,
    pub mask_id: u64,
    pub frame_count: usize,
}

/// Accepts `T × H × W` or `T × H × W × 1` and returns the frame extents.
fn video_extents(video: &Tensor) -> Result<[usize; 3]> {
    match *video.dims() {
        [t, h, w] | [t, h, w, 1] => Ok([t, h, w]),
        _ => Err(Error::dim("video", "expected T × H × W (× 1)", video.dims(), &[])),
    }
}

/// `I(y, x) = Σ_t M(t, y, x)·V(t, y, x) + Θ(y, x)` with `Θ ~ N(0, σ²)` drawn
/// from Philox stream 1 of `noise_seed` (untouched when `σ = 0`).
pub fn forward_measure(video: &Tensor, mask: &MaskCube, noise_sigma: f64, noise_seed: u64) -> Result<Measurement> {
    let [t, h, w] = video_extents(video)?;
    if [t, h, w] != [mask.frames(), mask.height(), mask.width()] {
        return Err(Error::dim("forward_measure", "video and mask extents differ", video.dims(), mask.values.dims()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma must be finite and ≥ 0, got {noise_sigma}")));
    }
    let frame = h * w;
    let (v, m) = (video.data(), mask.values.data());
    let mut image = vec![0.0; frame];
    for ti in 0..t {
        for (p, acc) in image.iter_mut().enumerate() {
            *acc += m[ti * frame + p] * v[ti * frame + p];
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = Philox::with_stream(noise_seed, 1);
        for acc in &mut image {
            *acc += noise_sigma * rng.normal();
        }
    }
    Ok(Measurement {
        image: Tensor::new(&[h, w], image)?,
        noise_sigma,
        mask_id: mask.id,
        frame_count: t,
    })
}

/// Normalized snapshot and its mask-stamped `T × H × W` expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialEstimate {
    pub normalized_image: Tensor,
    pub degraded_video: Tensor,
    /// Pixels where no frame was sampled; their normalized value is set to 0.
    pub zero_coverage: Vec<(usize, usize)>,
}

impl InitialEstimate {
    /// The normalized image repeated over all frames, the trivial static-scene estimate.
    pub fn broadcast(&self, frames: usize) -> Tensor {
        let d = self.normalized_image.data();
        let mut data = Vec::with_capacity(frames * d.len());
        for _ in 0..frames {
            data.extend_from_slice(d);
        }
        let [h, w] = [self.normalized_image.dims()[0], self.normalized_image.dims()[1]];
        Tensor::from_raw(vec![frames, h, w], data)
    }
}

/// `Ī = I ⊘ Σ_t M`, `V̄ = M ⊙ Ī`.
pub fn initialize_estimate(meas: &Measurement, mask: &MaskCube) -> Result<InitialEstimate> {
    if meas.mask_id != mask.id {
        return Err(Error::Contract(format!(
            "measurement was taken with mask {:#x}, got mask {:#x}",
            meas.mask_id, mask.id
        )));
    }
    if meas.frame_count != mask.frames() {
        return Err(Error::Contract(format!(
            "measurement integrates {} frames, mask has {}",
            meas.frame_count,
            mask.frames()
        )));
    }
    let (t, h, w) = (mask.frames(), mask.height(), mask.width());
    if meas.image.dims() != [h, w] {
        return Err(Error::dim("initialize_estimate", "image and mask extents differ", meas.image.dims(), &[h, w]));
    }
    let normalized: Vec<f64> = meas
        .image
        .data()
        .iter()
        .zip(&mask.temporal_sum)
        .map(|(&i, &s)| if s == 0 { 0.0 } else { i / f64::from(s) })
        .collect();
    let m = mask.values.data();
    let frame = h * w;
    let degraded = (0..t * frame).map(|i| m[i] * normalized[i % frame]).collect();
    Ok(InitialEstimate {
        normalized_image: Tensor::new(&[h, w], normalized)?,
        degraded_video: Tensor::new(&[t, h, w], degraded)?,
        zero_coverage: mask.zero_coverage(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(t: usize, h: usize, w: usize, bits: &[f64]) -> MaskCube {
        MaskCube::from_values(Tensor::new(&[t, h, w], bits.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn single_pixel_measure_and_init() {
        let mask = cube(2, 1, 1, &[1.0, 1.0]);
        let video = Tensor::new(&[2, 1, 1], vec![2.0, 4.0]).unwrap();
        let meas = forward_measure(&video, &mask, 0.0, 0).unwrap();
        assert_eq!(meas.image.data(), &[6.0]);
        let est = initialize_estimate(&meas, &mask).unwrap();
        assert_eq!(est.normalized_image.data(), &[3.0]);
        assert_eq!(est.degraded_video.data(), &[3.0, 3.0]);
    }

    #[test]
    fn all_zero_mask_gives_pure_noise() {
        let mask = cube(3, 2, 2, &[0.0; 12]);
        let video = Tensor::full(&[3, 2, 2], 0.7);
        let meas = forward_measure(&video, &mask, 0.0, 0).unwrap();
        assert!(meas.image.data().iter().all(|&v| v == 0.0));
        let noisy = forward_measure(&video, &mask, 0.1, 9).unwrap();
        assert!(noisy.image.data().iter().any(|&v| v != 0.0));
        let est = initialize_estimate(&meas, &mask).unwrap();
        assert_eq!(est.zero_coverage.len(), 4);
        assert!(est.normalized_image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_probability_is_config_error() {
        assert!(matches!(generate_mask(2, 2, 2, 0, 0.0), Err(Error::Config(_))));
        assert!(matches!(generate_mask(2, 2, 2, 0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let a = generate_mask(2, 4, 4, 1, 0.5).unwrap();
        let b = generate_mask(2, 4, 4, 2, 0.5).unwrap();
        let meas = forward_measure(&Tensor::ones(&[2, 4, 4]), &a, 0.0, 0).unwrap();
        assert!(initialize_estimate(&meas, &b).is_err());
        assert!(forward_measure(&Tensor::ones(&[3, 4, 4]), &a, 0.0, 0).is_err());
    }

    #[test]
    fn non_binary_mask_rejected() {
        assert!(MaskCube::from_values(Tensor::full(&[1, 1, 1], 0.5)).is_err());
    }
}
