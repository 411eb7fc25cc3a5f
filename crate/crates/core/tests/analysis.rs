mod common;

use common::random_tensor;
use hisvit_core::analysis::{
    analytic_macs, fidelity, psnr, ssim, verify_macs, ComplexityQuery, MsaKind, PSNR_CAP_DB,
};
use hisvit_core::rng::Philox;
use hisvit_core::{Error, Tensor};

fn query(kind: MsaKind, t: usize, h: usize, w: usize, d: usize, win: usize, rho: usize) -> ComplexityQuery {
    let q = ComplexityQuery::new(kind, t, h, w, d).window(win, win);
    match kind {
        MsaKind::Css => q.pooling(rho),
        MsaKind::W3d => q.temporal_window(if t.is_multiple_of(2) { 2 } else { 1 }),
        _ => q,
    }
}

#[test]
fn worked_example() {
    let css = query(MsaKind::Css, 2, 4, 4, 3, 2, 2);
    let sw = query(MsaKind::Sw, 2, 4, 4, 3, 2, 1);
    let fw = query(MsaKind::Fw, 2, 4, 4, 3, 2, 1);
    assert_eq!(analytic_macs(&css).unwrap(), 1152 + 384 + 192);
    assert_eq!(analytic_macs(&sw).unwrap(), 1152 + 1536);
    assert_eq!(analytic_macs(&fw).unwrap(), 2304 + 384 + 768);
    for q in [css, sw, fw] {
        let v = verify_macs(&q).unwrap();
        assert!(v.equal(), "{q:?}: {v:?}");
    }
}

fn sweep() -> Vec<(usize, usize, usize, usize, usize, usize)> {
    // (T, H, W, d, window, ρ)
    vec![
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
    ]
}

#[test]
fn instrumented_matches_analytic_on_sweep() {
    for (t, h, w, d, win, rho) in sweep() {
        for kind in [MsaKind::Css, MsaKind::Sw, MsaKind::Fw, MsaKind::W3d] {
            let q = query(kind, t, h, w, d, win, rho);
            let v = verify_macs(&q).unwrap();
            assert!(v.equal(), "{q:?}: {v:?}");
        }
        let css = analytic_macs(&query(MsaKind::Css, t, h, w, d, win, rho)).unwrap();
        let fw = analytic_macs(&query(MsaKind::Fw, t, h, w, d, win, rho)).unwrap();
        let f = analytic_macs(&query(MsaKind::F, t, h, w, d, win, rho)).unwrap();
        assert!(css <= fw && fw <= f, "{css} {fw} {f}");
    }
}

#[test]
fn quadratic_in_channel_width() {
    for (t, h, w, d, win, rho) in sweep() {
        for kind in MsaKind::ALL {
            let c = |d| analytic_macs(&query(kind, t, h, w, d, win, rho)).unwrap() as i128;
            let quad = (c(3 * d) - 3 * c(d)) / 6;
            let lin = c(d) - quad;
            assert_eq!(c(2 * d) - 4 * quad - 2 * lin, 0, "{kind}");
        }
    }
}

#[test]
fn missing_fields_and_analytic_kinds() {
    let q = ComplexityQuery::new(MsaKind::Css, 2, 4, 4, 3).window(2, 2);
    assert!(matches!(analytic_macs(&q), Err(Error::Config(_))));
    assert!(matches!(verify_macs(&ComplexityQuery::new(MsaKind::G, 2, 4, 4, 3)), Err(Error::Config(_))));
    assert_eq!(analytic_macs(&ComplexityQuery::new(MsaKind::G, 1, 1, 1, 1)).unwrap(), 4 + 2);
    assert_eq!("css".parse::<MsaKind>().unwrap(), MsaKind::Css);
}

// Loop-based references.

fn ref_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    10.0 * (1.0 / (s / a.len() as f64)).log10()
}

fn ref_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (h, w) = (a.dims()[0], a.dims()[1]);
    let mut win = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(x * x + y * y) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] / z * a.at(&[y0 + i, x0 + j]);
                    mb += win[i][j] / z * b.at(&[y0 + i, x0 + j]);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (da, db) = (a.at(&[y0 + i, x0 + j]) - ma, b.at(&[y0 + i, x0 + j]) - mb);
                    va += win[i][j] / z * da * da;
                    vb += win[i][j] / z * db * db;
                    cov += win[i][j] / z * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

fn image(seed: u64) -> Tensor {
    random_tensor(&[16, 20], seed, 0.5).map(|v| v + 0.5)
}

#[test]
fn psnr_cases() {
    let a = Tensor::zeros(&[4, 4]);
    let b = Tensor::full(&[4, 4], 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    for seed in 0..5 {
        let (x, y) = (image(seed), image(seed + 50));
        assert!((psnr(&x, &y, 1.0).unwrap() - ref_psnr(x.data(), y.data())).abs() < 1e-9);
    }
    assert!(psnr(&a, &Tensor::zeros(&[2, 8]), 1.0).is_err());
}

#[test]
fn psnr_drops_with_more_noise() {
    let clean = image(1);
    let mut rng = Philox::new(4);
    let noise: Vec<f64> = (0..clean.len()).map(|_| rng.normal()).collect();
    let noisy = |s: f64| Tensor::new(&[16, 20], clean.data().iter().zip(&noise).map(|(c, n)| c + s * n).collect()).unwrap();
    let p: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&s| psnr(&clean, &noisy(s), 1.0).unwrap()).collect();
    assert!(p[0] > p[1] && p[1] > p[2]);
}

#[test]
fn ssim_cases() {
    for seed in 0..5 {
        let (a, b) = (image(seed), image(seed + 100));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ref_ssim(&a, &b)).abs() < 1e-9);
    }
    let mut rng = Philox::new(9);
    let bin = Tensor::from_fn(&[16, 16], |_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).unwrap();
    let inv = bin.map(|v| 1.0 - v);
    let s = ssim(&bin, &inv).unwrap();
    assert!(s < 0.1, "{s}");
    assert!((s - ref_ssim(&bin, &inv)).abs() < 1e-9);
    assert!(ssim(&Tensor::zeros(&[8, 8]), &Tensor::zeros(&[8, 8])).is_err());
}

#[test]
fn fidelity_of_ground_truth() {
    let v = random_tensor(&[3, 12, 12], 2, 0.5).map(|x| x + 0.5);
    let r = fidelity(&v, &v).unwrap();
    assert_eq!(r.psnr_db, PSNR_CAP_DB);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert_eq!(r.per_frame.len(), 3);
}
