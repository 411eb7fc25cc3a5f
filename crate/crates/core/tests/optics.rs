use hisvit_core::optics::{forward_measure, generate_mask, initialize_estimate, MaskCube};
use hisvit_core::rng::Philox;
use hisvit_core::scene::{make_synthetic_video, Motif, SyntheticSceneSpec};
use hisvit_core::Tensor;

/// A mask drawn at `p` with every pixel sampled by at least one frame.
fn covering_mask(t: usize, h: usize, w: usize, seed: u64) -> MaskCube {
    let m = generate_mask(t, h, w, seed, 0.5).unwrap();
    let mut v = m.values().clone();
    for (y, x) in m.zero_coverage() {
        v.set(&[0, y, x], 1.0);
    }
    MaskCube::from_values(v).unwrap()
}

fn static_video(t: usize, frame: &Tensor) -> Tensor {
    let mut data = Vec::new();
    for _ in 0..t {
        data.extend_from_slice(frame.data());
    }
    let [h, w] = [frame.dims()[0], frame.dims()[1]];
    Tensor::new(&[t, h, w], data).unwrap()
}

#[test]
fn static_scene_back_projects_exactly() {
    for seed in 0..10 {
        let (t, h, w) = (8, 12, 10);
        let mask = covering_mask(t, h, w, seed);
        assert!(mask.zero_coverage().is_empty());
        let mut rng = Philox::new(100 + seed);
        let frame = Tensor::from_fn(&[h, w], |_| rng.uniform()).unwrap();
        let meas = forward_measure(&static_video(t, &frame), &mask, 0.0, 0).unwrap();
        let est = initialize_estimate(&meas, &mask).unwrap();
        // k equal terms summed then divided by k: at most a couple of roundings
        for (a, b) in est.normalized_image.data().iter().zip(frame.data()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs(), "{a} vs {b}");
        }
        // dyadic intensities make every step exact
        let dyadic = frame.map(|v| (v * 256.0).floor() / 256.0);
        let meas = forward_measure(&static_video(t, &dyadic), &mask, 0.0, 0).unwrap();
        let est = initialize_estimate(&meas, &mask).unwrap();
        assert_eq!(est.normalized_image, dyadic);
    }
}

#[test]
fn degraded_video_is_mask_times_normalized_image() {
    let (t, h, w) = (8, 16, 16);
    let mask = generate_mask(t, h, w, 3, 0.5).unwrap();
    let video = make_synthetic_video(&SyntheticSceneSpec::sample(t, h, w, 5)).unwrap();
    let est = initialize_estimate(&forward_measure(&video, &mask, 0.0, 0).unwrap(), &mask).unwrap();
    let m = mask.values();
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let expect = m.at(&[ti, y, x]) * est.normalized_image.at(&[y, x]);
                assert_eq!(est.degraded_video.at(&[ti, y, x]).to_bits(), expect.to_bits());
                if m.at(&[ti, y, x]) == 0.0 {
                    assert_eq!(est.degraded_video.at(&[ti, y, x]), 0.0);
                } else {
                    // V̄ ⊘ M is constant over the sampled frames
                    assert_eq!(est.degraded_video.at(&[ti, y, x]), est.normalized_image.at(&[y, x]));
                }
            }
        }
    }
}

#[test]
fn constant_video_gives_constant_estimate() {
    let mask = covering_mask(8, 8, 8, 11);
    let v = make_synthetic_video(&SyntheticSceneSpec {
        background: 0.375,
        foreground: 0.375,
        ..SyntheticSceneSpec::new(8, 8, 8, Motif::Static, 1)
    })
    .unwrap();
    let est = initialize_estimate(&forward_measure(&v, &mask, 0.0, 0).unwrap(), &mask).unwrap();
    assert!(est.normalized_image.data().iter().all(|&x| x == 0.375));
}

#[test]
fn measurement_is_linear_and_monotone() {
    let (t, h, w) = (4, 6, 6);
    let mask = generate_mask(t, h, w, 8, 0.5).unwrap();
    let mut rng = Philox::new(2);
    // small dyadic values keep all sums exact
    let mut dyadic = || Tensor::from_fn(&[t, h, w], |_| rng.below(64) as f64 / 64.0).unwrap();
    let (a, b) = (dyadic(), dyadic());
    let (ca, cb) = (3.0, -0.5);
    let combo = a.zip_map(&b, |x, y| ca * x + cb * y).unwrap();
    let fa = forward_measure(&a, &mask, 0.0, 0).unwrap().image;
    let fb = forward_measure(&b, &mask, 0.0, 0).unwrap().image;
    let fc = forward_measure(&combo, &mask, 0.0, 0).unwrap().image;
    assert_eq!(fc, fa.zip_map(&fb, |x, y| ca * x + cb * y).unwrap());

    let bigger = a.zip_map(&b, |x, y| x + y).unwrap();
    let fbig = forward_measure(&bigger, &mask, 0.0, 0).unwrap().image;
    assert!(fbig.data().iter().zip(fa.data()).all(|(p, q)| p >= q));
}

#[test]
fn noise_is_seeded_and_zero_sigma_is_clean() {
    let mask = generate_mask(4, 8, 8, 1, 0.5).unwrap();
    let v = Tensor::full(&[4, 8, 8], 0.5);
    let clean = forward_measure(&v, &mask, 0.0, 7).unwrap();
    assert_eq!(clean, forward_measure(&v, &mask, 0.0, 99).unwrap());
    let n1 = forward_measure(&v, &mask, 0.05, 7).unwrap();
    assert_eq!(n1, forward_measure(&v, &mask, 0.05, 7).unwrap());
    assert_ne!(n1.image, forward_measure(&v, &mask, 0.05, 8).unwrap().image);
    let diff = n1.image.zip_map(&clean.image, |a, b| a - b).unwrap();
    let sd = (diff.data().iter().map(|d| d * d).sum::<f64>() / 64.0).sqrt();
    assert!(sd > 0.02 && sd < 0.1, "{sd}");
}

#[test]
fn mask_density_within_binomial_bound() {
    for (seed, p) in [(0, 0.5), (1, 0.3), (2, 0.8), (3, 0.1)] {
        let m = generate_mask(8, 32, 32, seed, p).unwrap();
        let n = m.values().len() as f64;
        let mean = m.values().mean();
        assert!((mean - p).abs() < 3.0 * (p * (1.0 - p) / n).sqrt(), "seed {seed}: {mean}");
    }
    let a = generate_mask(8, 16, 16, 42, 0.5).unwrap();
    assert_eq!(a, generate_mask(8, 16, 16, 42, 0.5).unwrap());
    assert_ne!(a.id(), generate_mask(8, 16, 16, 43, 0.5).unwrap().id());
}
