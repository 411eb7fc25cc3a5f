#![allow(dead_code)]

use hisvit_core::layers::Parameters;
use hisvit_core::rng::Philox;
use hisvit_core::Tensor;

pub fn random_tensor(dims: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = Philox::new(seed);
    Tensor::from_fn(dims, |_| scale * (2.0 * rng.uniform() - 1.0)).unwrap()
}

/// Overwrites every parameter with uniform noise in `[-scale, scale)`.
pub fn randomize<P: Parameters>(p: &mut P, seed: u64, scale: f64) {
    let mut rng = Philox::new(seed);
    p.visit_mut("", &mut |_, param| {
        for v in param.value.data_mut() {
            *v = scale * (2.0 * rng.uniform() - 1.0);
        }
    });
}

