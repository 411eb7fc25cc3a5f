mod common;

use common::{random_tensor, randomize};
use hisvit_core::block::{
    branch_unit, channel_attention, gsm_ffn, hisvit_block, st_conv, BlockConfig, BlockParams, BranchConfig,
    BranchParams, ChannelAttentionParams, GsmFfnParams, StConvParams,
};
use hisvit_core::gradcheck::{check_gradients, combined_rel_err, check_param_gradients, random_projection};
use hisvit_core::layers::{zero_all, Init, Parameters};
use hisvit_core::ops::Activation;
use hisvit_core::{Graph, Tensor};

fn eval<F: FnOnce(&mut Graph, hisvit_core::Var) -> hisvit_core::Var>(x: &Tensor, f: F) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv);
    g.value(y).clone()
}

// Loop-based references, written directly from the definitions.

fn ref_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (din, dout) = (w.dims()[0], w.dims()[1]);
    let rows = x.len() / din;
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for j in 0..dout {
            let mut s = b.data()[j];
            for i in 0..din {
                s += x.data()[r * din + i] * w.data()[i * dout + j];
            }
            out[r * dout + j] = s;
        }
    }
    let mut dims = x.dims().to_vec();
    *dims.last_mut().unwrap() = dout;
    Tensor::new(&dims, out).unwrap()
}

fn ref_stconv(x: &Tensor, p: &StConvParams) -> Tensor {
    let [t, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (kt, bt) = (&p.temporal.weight.value, &p.temporal.bias.value);
    let (ks, bs) = (&p.spatial.weight.value, &p.spatial.bias.value);
    let at = |t: isize, y: isize, xx: isize, ch: usize| -> f64 {
        if t < 0 || y < 0 || xx < 0 || t >= t_i(x) || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x.at(&[t as usize, y as usize, xx as usize, ch])
        }
    };
    fn t_i(x: &Tensor) -> isize {
        x.dims()[0] as isize
    }
    let leaky = |v: f64| Activation::LeakyRelu.eval(v);
    Tensor::from_fn(&[t, h, w, c], |i| {
        let co = i % c;
        let xx = (i / c) % w;
        let y = (i / (c * w)) % h;
        let tt = i / (c * w * h);
        let mut temporal = bt.data()[co];
        for k in 0..3 {
            for ci in 0..c {
                temporal += kt.at(&[k, ci, co]) * at(tt as isize + k as isize - 1, y as isize, xx as isize, ci);
            }
        }
        let mut spatial = bs.data()[co];
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..c {
                    spatial += ks.at(&[ky, kx, ci, co])
                        * at(tt as isize, y as isize + ky as isize - 1, xx as isize + kx as isize - 1, ci);
                }
            }
        }
        leaky(temporal) + leaky(spatial)
    })
    .unwrap()
}

fn ref_gsm(x: &Tensor, p: &GsmFfnParams) -> Tensor {
    let h = ref_linear(x, &p.expand.weight.value, &p.expand.bias.as_ref().unwrap().value);
    let h = h.map(|v| Activation::Gelu.eval(v));
    let hidden = h.last_dim();
    let half = hidden / 2;
    let mut dims = h.dims().to_vec();
    *dims.last_mut().unwrap() = half;
    let pick = |start: usize| {
        Tensor::from_fn(&dims, |i| h.data()[(i / half) * hidden + start + i % half]).unwrap()
    };
    let (x1, x2) = (pick(0), pick(half));
    let conv = ref_stconv(&x2, &p.stconv);
    let mixed = x1.zip_map(&conv, |a, b| Activation::Sigmoid.eval(a) * b).unwrap();
    ref_linear(&mixed, &p.reduce.weight.value, &p.reduce.bias.as_ref().unwrap().value)
}

#[test]
fn gsm_ffn_matches_reference() {
    for seed in 0..20u64 {
        let c = [2, 4][(seed % 2) as usize];
        let t = 1 + (seed % 3) as usize;
        let mut p = GsmFfnParams::init(&mut Init::new(seed), c, 2);
        randomize(&mut p, 1000 + seed, 0.5);
        let x = random_tensor(&[t, 3, 4, c], seed, 1.0);
        let fast = eval(&x, |g, v| gsm_ffn(g, v, &p).unwrap());
        let err = fast.max_abs_diff(&ref_gsm(&x, &p));
        assert!(err < 1e-12, "seed {seed}: {err:e}");
    }
}

#[test]
fn st_conv_examples() {
    let mut p = StConvParams::init(&mut Init::new(1), 2);
    zero_all(&mut p);
    let zero = Tensor::zeros(&[2, 3, 3, 2]);
    assert_eq!(eval(&zero, |g, v| st_conv(g, v, &p).unwrap()), zero);
    for b in [0.7, -0.3] {
        p.temporal.bias.value = Tensor::full(&[2], b);
        p.spatial.bias.value = Tensor::full(&[2], b);
        let y = eval(&random_tensor(&[2, 3, 3, 2], 4, 1.0), |g, v| st_conv(g, v, &p).unwrap());
        let expect = 2.0 * Activation::LeakyRelu.eval(b);
        assert!(y.data().iter().all(|&v| v == expect));
    }
    // single frame: temporal path sees only its centre tap
    randomize(&mut p, 9, 0.5);
    let x = random_tensor(&[1, 3, 3, 2], 5, 1.0);
    let full = eval(&x, |g, v| st_conv(g, v, &p).unwrap());
    let mut centre = p.clone();
    for k in [0, 2] {
        for ci in 0..2 {
            for co in 0..2 {
                centre.temporal.weight.value.set(&[k, ci, co], 0.0);
            }
        }
    }
    assert_eq!(full, eval(&x, |g, v| st_conv(g, v, &centre).unwrap()));
}

#[test]
fn gsm_ffn_zero_cases() {
    let mut p = GsmFfnParams::init(&mut Init::new(2), 4, 2);
    zero_all(&mut p);
    let zero = Tensor::zeros(&[2, 2, 2, 4]);
    assert_eq!(eval(&zero, |g, v| gsm_ffn(g, v, &p).unwrap()), zero);
    // W₁ = 0 and a zero bias on the conv half: GELU(0) = 0 feeds STConv with zero biases
    randomize(&mut p.expand, 3, 1.0);
    p.expand.weight.value = Tensor::zeros(&[4, 8]);
    for v in &mut p.expand.bias.as_mut().unwrap().value.data_mut()[4..] {
        *v = 0.0;
    }
    randomize(&mut p.reduce, 4, 1.0);
    p.reduce.bias.as_mut().unwrap().value = Tensor::zeros(&[4]);
    let y = eval(&random_tensor(&[2, 2, 2, 4], 6, 1.0), |g, v| gsm_ffn(g, v, &p).unwrap());
    assert_eq!(y, zero);
}

#[test]
fn branch_unit_residual_identity() {
    let cfg = BranchConfig::new(2, 4, 2, 2, 2);
    let mut p = BranchParams::init(&mut Init::new(3), &cfg, 0);
    zero_all(&mut p.attention.output);
    zero_all(&mut p.ffn.reduce);
    let x = random_tensor(&[2, 4, 4, 4], 8, 1.0);
    assert_eq!(eval(&x, |g, v| branch_unit(g, v, &cfg, &p).unwrap()), x);
}

#[test]
fn branch_unit_every_parameter_gets_gradient() {
    let cfg = BranchConfig::new(2, 4, 2, 2, 2);
    let mut p = BranchParams::init(&mut Init::new(3), &cfg, 0);
    randomize(&mut p, 12, 0.4);
    let x = random_tensor(&[2, 4, 4, 4], 8, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let y = branch_unit(&mut g, xv, &cfg, &p).unwrap();
    let loss = random_projection(&mut g, y, 1).unwrap();
    let grads = g.backward(loss).unwrap();
    for (name, param) in p.named_params() {
        let grad = grads.param(param.id).unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(grad.data().iter().any(|&v| v != 0.0), "{name} gradient is zero");
    }
}

fn toy_block(shift: bool) -> BlockConfig {
    BlockConfig::new(vec![
        BranchConfig::new(1, 4, 2, 2, 2),
        BranchConfig::new(2, 4, 2, 2, 2),
        BranchConfig::new(4, 8, 2, 2, 2),
    ])
    .unwrap()
    .with_shift(shift)
}

#[test]
fn block_preserves_shape() {
    let cfg = BlockConfig::new(vec![
        BranchConfig::new(1, 16, 4, 2, 2),
        BranchConfig::new(2, 16, 4, 2, 2),
        BranchConfig::new(4, 32, 4, 2, 2),
    ])
    .unwrap();
    let p = BlockParams::init(&mut Init::new(0), &cfg);
    let x = random_tensor(&[2, 8, 8, 64], 1, 1.0);
    assert_eq!(eval(&x, |g, v| hisvit_block(g, v, &cfg, &p).unwrap()).dims(), x.dims());
}

#[test]
fn single_branch_block_is_unit_then_gate() {
    let branch = BranchConfig::new(2, 4, 2, 2, 2);
    let cfg = BlockConfig::new(vec![branch]).unwrap();
    let mut p = BlockParams::init(&mut Init::new(0), &cfg);
    randomize(&mut p, 2, 0.5);
    let x = random_tensor(&[2, 4, 4, 4], 3, 1.0);
    let block = eval(&x, |g, v| hisvit_block(g, v, &cfg, &p).unwrap());
    let manual = eval(&x, |g, v| {
        let u = branch_unit(g, v, &branch, &p.branches[0]).unwrap();
        channel_attention(g, u, &p.channel_attention).unwrap()
    });
    assert_eq!(block, manual);
}

#[test]
fn dense_connections_are_causal() {
    let cfg = toy_block(false);
    let mut p = BlockParams::init(&mut Init::new(4), &cfg);
    randomize(&mut p, 40, 0.4);
    let x = random_tensor(&[2, 8, 8, 16], 5, 1.0);
    let mut y = x.clone();
    // the last portion belongs to the top branch
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        if i % 16 >= 12 {
            *v += 0.5;
        }
    }
    let bottom = |input: &Tensor| {
        eval(input, |g, v| {
            let portion = g.slice_channels(v, 0, cfg.branches[0].channels).unwrap();
            branch_unit(g, portion, &cfg.branches[0], &p.branches[0]).unwrap()
        })
    };
    assert_eq!(cfg.branches[0].rho, 4);
    assert_eq!(bottom(&x), bottom(&y));
}

#[test]
fn channel_attention_scales_in_unit_interval() {
    let mut p = ChannelAttentionParams::init(&mut Init::new(0), 6);
    randomize(&mut p, 7, 3.0);
    let x = Tensor::full(&[2, 3, 3, 6], 1.0);
    let y = eval(&x, |g, v| channel_attention(g, v, &p).unwrap());
    assert!(y.data().iter().all(|&s| s > 0.0 && s < 1.0));
    // a constant input pools to itself: scale = sigmoid(excite(gelu(squeeze(c))))
    let c = Tensor::full(&[1, 6], 1.0);
    let s = ref_linear(&c, &p.squeeze.weight.value, &p.squeeze.bias.as_ref().unwrap().value).map(|v| Activation::Gelu.eval(v));
    let e = ref_linear(&s, &p.excite.weight.value, &p.excite.bias.as_ref().unwrap().value).map(|v| Activation::Sigmoid.eval(v));
    for (k, &v) in y.data()[..6].iter().enumerate() {
        assert!((v - e.data()[k]).abs() < 1e-15);
    }
}

#[test]
fn block_gradient_check() {
    let cfg = toy_block(true);
    let mut p = BlockParams::init(&mut Init::new(5), &cfg);
    randomize(&mut p, 50, 0.3);
    let x = random_tensor(&[2, 8, 8, 16], 6, 1.0);
    let report = check_gradients(std::slice::from_ref(&x), 1e-5, Some(40), |g, v| {
        let y = hisvit_block(g, v[0], &cfg, &p)?;
        random_projection(g, y, 2)
    })
    .unwrap();
    assert!(report.max_rel_err() < 1e-5, "{report:?}");
    let reports = check_param_gradients(&mut p, 1e-5, Some(6), |g, m| {
        let xv = g.constant(x.clone());
        let y = hisvit_block(g, xv, &cfg, m)?;
        random_projection(g, y, 2)
    })
    .unwrap();
    let err = combined_rel_err(reports.iter().map(|(_, r)| r));
    assert!(err < 1e-5, "{err:e} {reports:?}");
}
