//! Reconstruction core for video snapshot compressive imaging.
//!
//! Everything here is pure computation over [`Tensor`]s: the acquisition model
//! and its pseudoinverse initialization ([`optics`]), the recorded
//! reverse-mode tape ([`tape`], [`ops`]), cross-scale separable attention and
//! its baselines ([`attention`]), the multi-branch block ([`block`]), the
//! reconstruction network ([`net`]), complexity and fidelity metrics
//! ([`analysis`]), and the training loop ([`train`]).
//!
//! The crate is `no_std` + `alloc`; file formats and the CLI live in the
//! companion `hisvit` crate.
#![no_std]

extern crate alloc;

pub mod analysis;
pub mod attention;
pub mod block;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod ops;
pub mod optics;
pub mod optim;
pub mod rng;
pub mod scene;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Graph, Param, ParamId, Var};
pub use tensor::Tensor;
