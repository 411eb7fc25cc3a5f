//! Finite-difference checks of every differentiable tape operation, plus
//! property tests of the shape-moving primitives.

mod common;

use common::random_tensor;
use hisvit_core::gradcheck::{check_gradients, random_projection};
use hisvit_core::ops::Activation;
use hisvit_core::tape::{Graph, OpKind};
use hisvit_core::{Result, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let report = check_gradients(inputs, H, None, |g, v| {
        let y = f(g, v)?;
        random_projection(g, y, 17)
    })
    .unwrap();
    let err = report.max_rel_err();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

fn r(dims: &[usize], seed: u64) -> Tensor {
    random_tensor(dims, seed, 1.0)
}

/// Keeps values away from the kink at 0.
fn off_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
}

#[test]
fn elementwise_ops() {
    let (a, b) = (r(&[2, 3, 4], 1), r(&[2, 3, 4], 2));
    check("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("sub", &[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check("mul", &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check("mul_const", std::slice::from_ref(&a), |g, v| Ok(g.mul_const(v[0], -2.5)));
    check("exp", std::slice::from_ref(&a), |g, v| Ok(g.exp(v[0])));
    check("mul_channel", &[a.clone(), r(&[4], 3)], |g, v| g.mul_channel(v[0], v[1]));
    check("add_channel", &[a.clone(), r(&[4], 4)], |g, v| g.add_channel(v[0], v[1]));
    check("sum", std::slice::from_ref(&a), |g, v| Ok(g.sum(v[0])));
    check("mse", &[a.clone(), b], |g, v| g.mse(v[0], v[1]));
    check("mean_tokens", &[a], |g, v| Ok(g.mean_tokens(v[0])));
}

#[test]
fn activations() {
    let x = off_zero(r(&[3, 5], 5).map(|v| 3.0 * v));
    for kind in [Activation::Gelu, Activation::Sigmoid, Activation::LeakyRelu] {
        check(&format!("{kind:?}"), std::slice::from_ref(&x), |g, v| Ok(g.activation(kind, v[0])));
    }
}

#[test]
fn linear_algebra() {
    check("bmm", &[r(&[2, 3, 4], 6), r(&[2, 4, 5], 7)], |g, v| g.matmul_batched(v[0], v[1], false));
    check("bmm_t", &[r(&[2, 3, 4], 8), r(&[2, 5, 4], 9)], |g, v| g.matmul_batched(v[0], v[1], true));
    check("bmm_order_free", &[r(&[2, 3, 4], 10), r(&[2, 4, 5], 11)], |g, v| {
        g.matmul_order_free(v[0], v[1])
    });
    check("linear", &[r(&[2, 3, 4], 12), r(&[4, 6], 13), r(&[6], 14)], |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    check("linear_nobias", &[r(&[5, 4], 15), r(&[4, 2], 16)], |g, v| g.linear(v[0], v[1], None));
}

#[test]
fn normalization_and_softmax() {
    let x = r(&[3, 4, 6], 20);
    check("softmax", std::slice::from_ref(&x), |g, v| Ok(g.softmax(v[0])));
    check("softmax_order_free", std::slice::from_ref(&x), |g, v| Ok(g.softmax_order_free(v[0])));
    check("layer_norm", &[x, r(&[6], 21), r(&[6], 22)], |g, v| g.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn spatial_ops() {
    let x = r(&[2, 4, 4, 4], 30);
    check("reshape", std::slice::from_ref(&x), |g, v| g.reshape(v[0], &[8, 8, 2]));
    check("avg_pool", std::slice::from_ref(&x), |g, v| g.avg_pool(v[0], 2));
    check("pixel_shuffle", std::slice::from_ref(&x), |g, v| g.pixel_shuffle(v[0], 2));
    check("pixel_unshuffle", std::slice::from_ref(&x), |g, v| g.pixel_unshuffle(v[0], 2));
    check("gather_rows", std::slice::from_ref(&x), |g, v| g.gather_rows(v[0], 4, vec![3, 0, 3, 31, 7], &[5, 4]));
    check("concat", &[x.clone(), r(&[2, 4, 4, 3], 31)], |g, v| g.concat(&[v[0], v[1]]));
    check("slice_channels", std::slice::from_ref(&x), |g, v| g.slice_channels(v[0], 1, 2));
    check("conv2d", &[x.clone(), r(&[3, 3, 4, 5], 32), r(&[5], 33)], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 1)
    });
    check("conv2d_stride2", &[x.clone(), r(&[3, 3, 4, 3], 34)], |g, v| g.conv2d(v[0], v[1], None, 2));
    check("conv_temporal", &[x, r(&[3, 4, 2], 35), r(&[2], 36)], |g, v| g.conv_temporal(v[0], v[1], Some(v[2])));
}

fn eval(x: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = f(&mut g, v).unwrap();
    g.value(y).clone()
}

fn sorted(t: &Tensor) -> Vec<u64> {
    let mut bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
    bits.sort_unstable();
    bits
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..30.0) {
        let x = random_tensor(&[rows, cols], seed, scale);
        let y = eval(&x, |g, v| Ok(g.softmax(v)));
        for row in y.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn shuffle_permutes_values_and_inverts(t in 1usize..3, h in 1usize..4, w in 1usize..4, c in 1usize..3, r in 1usize..4, seed in any::<u64>()) {
        let x = random_tensor(&[t, h, w, c * r * r], seed, 1.0);
        let y = eval(&x, |g, v| g.pixel_shuffle(v, r));
        prop_assert_eq!(y.dims(), &[t, h * r, w * r, c][..]);
        prop_assert_eq!(sorted(&y), sorted(&x));
        let back = eval(&y, |g, v| g.pixel_unshuffle(v, r));
        prop_assert_eq!(back, x);
    }

    #[test]
    fn pooling_preserves_the_mean(t in 1usize..3, hb in 1usize..4, wb in 1usize..4, rho in 1usize..4, seed in any::<u64>()) {
        let x = random_tensor(&[t, hb * rho, wb * rho, 2], seed, 1.0);
        let y = eval(&x, |g, v| g.avg_pool(v, rho));
        prop_assert_eq!(y.dims(), &[t, hb, wb, 2][..]);
        prop_assert!((y.mean() - x.mean()).abs() < 1e-12);
    }

    #[test]
    fn macs_add_over_operations(m in 1usize..5, k in 1usize..5, n in 1usize..5, rows in 1usize..4) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[rows, m, k]));
        let b = g.constant(Tensor::zeros(&[rows, k, n]));
        let w = g.constant(Tensor::zeros(&[n, 3]));
        let y = g.matmul_batched(a, b, false).unwrap();
        let _ = g.linear(y, w, None).unwrap();
        let _ = g.softmax(y);
        prop_assert_eq!(g.macs().get(OpKind::MatMul), (rows * m * k * n) as u64);
        prop_assert_eq!(g.macs().get(OpKind::Linear), (rows * m * n * 3) as u64);
        prop_assert_eq!(g.macs().total(), (rows * m * k * n + rows * m * n * 3) as u64);
    }
}
