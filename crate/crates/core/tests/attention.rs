mod common;

use common::{random_tensor, randomize};
use hisvit_core::attention::{
    baseline_msa, css_msa, joint_attention_oracle, AttentionConfig, AttentionParams, BaselineKind, ORACLE_TOKEN_LIMIT,
};
use hisvit_core::gradcheck::{check_gradients, random_projection};
use hisvit_core::layers::Init;
use hisvit_core::rng::Philox;
use hisvit_core::{Error, Graph, Tensor};

fn run_css(x: &Tensor, cfg: &AttentionConfig, params: &AttentionParams) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = css_msa(&mut g, xv, cfg, params).unwrap();
    g.value(y).clone()
}

fn random_case(seed: u64) -> (Tensor, AttentionConfig, AttentionParams) {
    let mut rng = Philox::new(seed);
    let t = [2, 4][rng.below(2) as usize];
    let d = [4, 8][rng.below(2) as usize];
    let heads = 1 + rng.below(2) as usize;
    let rho = 1 + rng.below(2) as usize;
    let win = [1, 2, 4][rng.below(3) as usize].min(8 / rho);
    let extent = rho * win;
    // frame sizes from half a window (reflect-padded) up to 8
    let lo = extent / 2 + 1;
    let h = lo + rng.below((8 - lo + 1) as u64) as usize;
    let w = lo + rng.below((8 - lo + 1) as u64) as usize;
    let cfg = AttentionConfig::new(d, heads, win, rho).shifted(rng.below(2) == 1);
    let mut params = AttentionParams::init(&mut Init::new(seed), &cfg, true);
    randomize(&mut params, seed ^ 0xABCD, 0.6);
    (random_tensor(&[t, h, w, d], seed + 1, 1.0), cfg, params)
}

#[test]
fn css_matches_oracle_on_random_configs() {
    for seed in 0..20 {
        let (x, cfg, params) = random_case(seed);
        let fast = run_css(&x, &cfg, &params);
        let oracle = joint_attention_oracle(&x, &cfg, &params).unwrap();
        let err = fast.max_abs_diff(&oracle.output);
        assert!(err < 1e-9, "seed {seed} {cfg:?} dims {:?}: err {err:e}", x.dims());
        for joint in &oracle.windows {
            for s in joint.row_sums() {
                assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }
}

#[test]
fn css_matches_oracle_at_full_size() {
    for rho in [1, 2] {
        let cfg = AttentionConfig::new(8, 2, 8 / rho, rho);
        let mut params = AttentionParams::init(&mut Init::new(3), &cfg, false);
        randomize(&mut params, 17 + rho as u64, 0.5);
        let x = random_tensor(&[4, 8, 8, 8], 5, 1.0);
        let oracle = joint_attention_oracle(&x, &cfg, &params).unwrap();
        assert!(run_css(&x, &cfg, &params).max_abs_diff(&oracle.output) < 1e-9);
    }
}

#[test]
fn temporal_permutation_equivariance() {
    for seed in 0..8 {
        let (x, cfg, params) = random_case(100 + seed);
        let frames = x.dims()[0];
        let perm: Vec<usize> = (0..frames).rev().collect();
        let a = run_css(&x.permute_leading(&perm), &cfg, &params);
        let b = run_css(&x, &cfg, &params).permute_leading(&perm);
        assert_eq!(a, b, "seed {seed}");
    }
}

fn identity_params(d: usize, heads: usize, wq: Tensor, wk: Tensor) -> AttentionParams {
    let eye = Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 }).unwrap();
    AttentionParams::from_matrices(&mut Init::new(0), wq, wk, eye.clone(), eye, &vec![1.0; heads], &vec![1.0; heads])
        .unwrap()
}

#[test]
fn single_token_is_identity() {
    let cfg = AttentionConfig::new(3, 1, 1, 1);
    let params = identity_params(3, 1, random_tensor(&[3, 3], 1, 1.0), random_tensor(&[3, 3], 2, 1.0));
    let x = Tensor::new(&[1, 1, 1, 3], vec![0.5, -2.0, 7.0]).unwrap();
    assert_eq!(run_css(&x, &cfg, &params), x);
    for kind in [BaselineKind::W3d, BaselineKind::Sw] {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = baseline_msa(&mut g, kind, xv, &cfg, std::slice::from_ref(&params)).unwrap();
        assert_eq!(g.value(y), &x);
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = baseline_msa(&mut g, BaselineKind::Fw, xv, &cfg, &[params.clone(), params]).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn zero_scores_average_frames() {
    let cfg = AttentionConfig::new(1, 1, 1, 1);
    let params = identity_params(1, 1, Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 1]));
    let x = Tensor::new(&[2, 1, 1, 1], vec![2.0, 4.0]).unwrap();
    assert_eq!(run_css(&x, &cfg, &params).data(), &[3.0, 3.0]);
}

#[test]
fn same_frame_mass_equals_temporal_self_weight() {
    let cfg = AttentionConfig::new(4, 1, 2, 1);
    let mut params = AttentionParams::init(&mut Init::new(9), &cfg, false);
    randomize(&mut params, 90, 0.7);
    let tau = params.log_tau_spatial.value.clone();
    params.log_tau_temporal.value = tau;
    let x = random_tensor(&[3, 4, 4, 4], 91, 1.0);
    let oracle = joint_attention_oracle(&x, &cfg, &params).unwrap();
    for j in &oracle.windows {
        for t in 0..j.frames {
            for p in 0..j.positions {
                let diff = j.same_frame_mass(t, p) - j.temporal_weight(p, t, t);
                assert!(diff.abs() < 1e-14);
            }
        }
    }
}

#[test]
fn shapes_preserved_for_every_kind() {
    let x = random_tensor(&[2, 6, 6, 4], 4, 1.0);
    for rho in [1, 2] {
        let cfg = AttentionConfig::new(4, 2, 2, rho);
        let params = AttentionParams::init(&mut Init::new(1), &cfg, true);
        assert_eq!(run_css(&x, &cfg, &params).dims(), x.dims());
    }
    let mut cfg = AttentionConfig::new(4, 2, 2, 1);
    cfg.window_t = 2;
    let mut init = Init::new(2);
    let p = [AttentionParams::init(&mut init, &cfg, true), AttentionParams::init(&mut init, &cfg, true)];
    for kind in [BaselineKind::W3d, BaselineKind::Sw, BaselineKind::Fw] {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = baseline_msa(&mut g, kind, xv, &cfg, &p[..kind.layers()]).unwrap();
        assert_eq!(g.dims(y), x.dims());
    }
}

#[test]
fn sw_with_one_frame_equals_w3d() {
    let cfg = AttentionConfig::new(4, 2, 2, 1).shifted(true);
    let mut params = AttentionParams::init(&mut Init::new(1), &cfg, true);
    randomize(&mut params, 5, 0.5);
    let x = random_tensor(&[1, 4, 6, 4], 6, 1.0);
    let run = |kind| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = baseline_msa(&mut g, kind, xv, &cfg, std::slice::from_ref(&params)).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(BaselineKind::Sw), run(BaselineKind::W3d));
}

#[test]
fn unknown_kind_and_bad_tau_rejected() {
    assert!(matches!("g".parse::<BaselineKind>(), Err(Error::Config(_))));
    let cfg = AttentionConfig::new(2, 1, 1, 1);
    let mut params = AttentionParams::init(&mut Init::new(1), &cfg, false);
    params.log_tau_spatial.value = Tensor::zeros(&[2]);
    let x = Tensor::zeros(&[1, 1, 1, 2]);
    assert!(matches!(joint_attention_oracle(&x, &cfg, &params), Err(Error::Parameter(_))));
}

#[test]
fn oracle_refuses_large_instances() {
    let cfg = AttentionConfig::new(1, 1, 8, 1);
    let params = AttentionParams::init(&mut Init::new(1), &cfg, false);
    let side = 1 + (ORACLE_TOKEN_LIMIT as f64).sqrt() as usize;
    let x = Tensor::zeros(&[1, side, side, 1]);
    assert!(matches!(joint_attention_oracle(&x, &cfg, &params), Err(Error::Resource(_))));
}

#[test]
fn css_gradient_check() {
    for rho in [1, 2] {
        let cfg = AttentionConfig::new(4, 2, 2, rho).shifted(rho == 2);
        let mut params = AttentionParams::init(&mut Init::new(2), &cfg, true);
        randomize(&mut params, 8, 0.6);
        let x = random_tensor(&[2, 4, 4, 4], 3, 1.0);
        let report = check_gradients(&[x], 1e-5, None, |g, v| {
            let y = css_msa(g, v[0], &cfg, &params)?;
            random_projection(g, y, 11)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{report:?}");
    }
}
