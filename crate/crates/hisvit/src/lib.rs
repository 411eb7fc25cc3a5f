//! File formats, command-line harness and acceptance checks around
//! [`hisvit_core`].
//!
//! Tensors travel as VSTC containers, models as VSCK checkpoints, training
//! configurations as INI text and reports as CSV.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod selftest;
pub mod vstc;

pub use checkpoint::Checkpoint;
pub use error::{HarnessError, Result};
